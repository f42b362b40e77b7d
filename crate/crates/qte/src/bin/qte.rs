//! Command-line front-end.
//!
//! Exit codes: 0 success, 2 validation/configuration failure, 3 enumeration
//! budget exceeded, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qte::config::ConfigBuilder;
use qte::csvio::ingest_csv;
use qte::data::{validate, Design};
use qte::Error;

#[derive(Parser)]
#[command(
    name = "qte",
    version,
    about = "Randomization tests, simultaneous confidence limits, and sensitivity \
             analysis for quantiles of individual treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an analysis described by a config file and/or flags.
    Run(RunArgs),
    /// Check a dataset against the model invariants and exit.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// CSV with header `stratum,treated,outcome`.
    #[arg(long)]
    data: PathBuf,
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// scre | sensitivity | two_sided
    #[arg(long)]
    analysis: Option<String>,
    /// wilcoxon | stephenson | custom
    #[arg(long)]
    score: Option<String>,
    /// Stephenson h (single value or comma list, one per stratum).
    #[arg(long)]
    stephenson_h: Option<String>,
    /// Path to a custom per-rank score list (one score per line).
    #[arg(long)]
    custom_scores: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// ilp (exact) | lp (conservative, faster)
    #[arg(long)]
    method: Option<String>,
    /// Seed for the reproducible random tie-breaking order.
    #[arg(long)]
    tie_seed: Option<String>,
    /// false | true | comma mask of 0/1 per stratum
    #[arg(long)]
    switch_labels: Option<String>,
    /// auto | exact | mc
    #[arg(long)]
    null: Option<String>,
    #[arg(long)]
    mc_reps: Option<String>,
    #[arg(long)]
    mc_seed: Option<String>,
    /// Cap on the joint assignment space for exact enumeration.
    #[arg(long)]
    exact_budget: Option<String>,
    /// Sensitivity parameter(s), comma separated, each >= 1.
    #[arg(long)]
    gamma: Option<String>,
    /// auto | gaussian | finite
    #[arg(long)]
    tail: Option<String>,
    /// Set count at which `tail=auto` switches to the Gaussian tail.
    #[arg(long)]
    tail_threshold: Option<String>,
    /// all | comma list of quantile ranks k
    #[arg(long)]
    quantiles: Option<String>,
    /// Comma list of thresholds c for n(c) confidence limits.
    #[arg(long)]
    thresholds: Option<String>,
    /// Threshold used by the sensitivity Gamma-cutoff table.
    #[arg(long)]
    cutoff_threshold: Option<String>,
    #[arg(long)]
    gamma_resolution: Option<String>,
    #[arg(long)]
    output_json: Option<String>,
    #[arg(long)]
    output_csv: Option<String>,
    /// Worker threads (defaults to machine parallelism; QTE_THREADS env var
    /// applies when neither flag nor config sets it).
    #[arg(long)]
    threads: Option<String>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    /// scre | matched
    #[arg(long, default_value = "scre")]
    design: String,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::BudgetExceeded { .. } => 3,
        Error::Config(_)
        | Error::Csv { .. }
        | Error::InvalidDataset(_)
        | Error::WrongDesign(_)
        | Error::InvalidArgument(_)
        | Error::ShapeMismatch(_)
        | Error::KOutOfRange { .. } => 2,
        Error::Io(_) => 1,
    }
}

fn run_command(args: &RunArgs) -> Result<(), Error> {
    let mut builder = ConfigBuilder::new();
    if let Some(path) = &args.config {
        builder.load_file(path)?;
    }
    let overrides: [(&str, &Option<String>); 20] = [
        ("analysis", &args.analysis),
        ("score", &args.score),
        ("stephenson_h", &args.stephenson_h),
        ("custom_scores", &args.custom_scores),
        ("alpha", &args.alpha),
        ("method", &args.method),
        ("tie_seed", &args.tie_seed),
        ("switch_labels", &args.switch_labels),
        ("null", &args.null),
        ("mc_reps", &args.mc_reps),
        ("mc_seed", &args.mc_seed),
        ("exact_budget", &args.exact_budget),
        ("gamma", &args.gamma),
        ("tail", &args.tail),
        ("tail_threshold", &args.tail_threshold),
        ("quantiles", &args.quantiles),
        ("thresholds", &args.thresholds),
        ("cutoff_threshold", &args.cutoff_threshold),
        ("gamma_resolution", &args.gamma_resolution),
        ("threads", &args.threads),
    ];
    for (key, value) in overrides {
        if let Some(value) = value {
            builder.set(key, value)?;
        }
    }
    if let Some(v) = &args.output_json {
        builder.set("output_json", v)?;
    }
    if let Some(v) = &args.output_csv {
        builder.set("output_csv", v)?;
    }
    let config = builder.build()?;
    qte::runner::run(&args.data, &config)
}

fn validate_command(args: &ValidateArgs) -> Result<(), Error> {
    let design = match args.design.as_str() {
        "scre" => Design::Scre,
        "matched" | "matched_sets" => Design::MatchedSets,
        other => {
            return Err(Error::Config(format!(
                "design must be scre|matched, got {other:?}"
            )))
        }
    };
    let dataset = ingest_csv(&args.data, design)?;
    let report = validate(&dataset);
    if report.items.is_empty() {
        println!(
            "ok: {} strata, {} units, {} treated",
            dataset.num_strata(),
            dataset.total_units(),
            dataset.total_treated()
        );
    } else {
        println!("{}", report.to_message());
    }
    if report.is_valid() {
        Ok(())
    } else {
        Err(Error::InvalidDataset("see findings above".to_string()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Validate(args) => validate_command(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
