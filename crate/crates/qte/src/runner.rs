//! Batch front-end: ingest a CSV and a run configuration, run the requested
//! analysis, and emit `report.json` plus a plot-ready `limits.csv`.
//! Re-running with identical inputs and seeds produces byte-identical CSV
//! output and identical numeric report fields (timestamps excluded).

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{
    Analysis, NullChoice, QuantileChoice, RunConfig, ScoreChoice, StephensonChoice, SwitchChoice,
    TailChoice,
};
use crate::csvio::ingest_csv;
use crate::data::{
    permute_units, switch_labels, switch_labels_masked, validate, Design, StratifiedDataset,
};
use crate::inference::{
    invert_confidence, two_sided_batch, InversionOptions, Method, NullSpec, QuantileReport,
    TwoSidedDetail,
};
use crate::nulldist::{NullDistribution, NullMode};
use crate::scores::{RankScoreSpec, TiePolicy};
use crate::sensitivity::{gamma_cutoff, sensitivity_confidence, GammaCutoff, SensitivityTail};
use crate::{Error, Result};

#[derive(Debug, Serialize)]
struct Provenance {
    config_hash: String,
    version: &'static str,
    method: Method,
    tie_seed: Option<u64>,
    mc_seed: Option<u64>,
    threads: Option<usize>,
    runtime_secs: f64,
}

#[derive(Debug, Serialize)]
struct CutoffRow {
    k: usize,
    threshold: f64,
    cutoff: GammaCutoff,
}

#[derive(Debug, Serialize)]
struct ReportDoc {
    analysis: &'static str,
    provenance: Provenance,
    validation_warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_mode: Option<NullMode>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    reports: Vec<QuantileReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gamma_cutoffs: Vec<CutoffRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    two_sided: Vec<TwoSidedDetail>,
}

/// Executes the configured analysis against the CSV at `data_path`.
pub fn run(data_path: &Path, config: &RunConfig) -> Result<()> {
    match config.threads {
        Some(n) => install_pool(n, || run_inner(data_path, config)),
        None => match std::env::var("QTE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
        {
            Some(n) => install_pool(n, || run_inner(data_path, config)),
            None => run_inner(data_path, config),
        },
    }
}

fn install_pool<T>(threads: usize, job: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("could not build thread pool: {e}")))?;
    pool.install(job)
}

fn run_inner(data_path: &Path, config: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let design = match config.analysis {
        Analysis::Sensitivity => Design::MatchedSets,
        _ => Design::Scre,
    };
    let mut dataset = ingest_csv(data_path, design)?;

    let report = validate(&dataset);
    if !report.is_valid() {
        return Err(Error::InvalidDataset(report.to_message()));
    }
    let warnings: Vec<String> = report.items.iter().map(|i| i.message.clone()).collect();
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }

    match &config.switch_labels {
        SwitchChoice::Off => {}
        SwitchChoice::All => dataset = switch_labels(&dataset),
        SwitchChoice::Mask(mask) => dataset = switch_labels_masked(&dataset, mask)?,
    }
    if config.switch_labels == SwitchChoice::Off {
        let treated = dataset.total_treated();
        let controls = dataset.total_units() - treated;
        if controls > treated {
            eprintln!(
                "warning: the control group is larger than the treated group \
                 ({controls} vs {treated}); lower confidence limits are usually more \
                 informative after label switching (switch_labels=true)"
            );
        }
    }
    if let Some(seed) = config.tie_seed {
        dataset = permute_units(&dataset, seed);
    }

    let spec = build_score_spec(config, &dataset)?;
    let ks = match &config.quantiles {
        QuantileChoice::All => None,
        QuantileChoice::List(list) => Some(list.clone()),
    };
    let options = InversionOptions {
        ks: ks.clone(),
        thresholds: config.thresholds.clone(),
    };

    let mut doc = ReportDoc {
        analysis: match config.analysis {
            Analysis::Scre => "scre",
            Analysis::Sensitivity => "sensitivity",
            Analysis::TwoSided => "two_sided",
        },
        provenance: Provenance {
            config_hash: hash_hex(&config.canonical),
            version: env!("CARGO_PKG_VERSION"),
            method: config.method,
            tie_seed: config.tie_seed,
            mc_seed: config.mc_seed,
            threads: config.threads,
            runtime_secs: 0.0,
        },
        validation_warnings: warnings,
        null_mode: None,
        reports: Vec::new(),
        gamma_cutoffs: Vec::new(),
        two_sided: Vec::new(),
    };

    let mut csv_out = String::new();
    match config.analysis {
        Analysis::Scre => {
            let null = build_null(config, &dataset, &spec)?;
            doc.null_mode = Some(null.mode());
            let report = invert_confidence(
                &dataset,
                &spec,
                TiePolicy::FirstByUnitOrder,
                config.alpha,
                &null,
                config.method,
                &options,
            )?;
            csv_out.push_str("k,lower_limit\n");
            for limit in &report.limits {
                csv_out.push_str(&format!("{},{}\n", limit.k, fmt_limit(limit.lower)));
            }
            doc.reports.push(report);
        }
        Analysis::Sensitivity => {
            let tail = resolve_tail(config, &dataset);
            csv_out.push_str("k,lower_limit,gamma\n");
            for &gamma in &config.gammas {
                let report = sensitivity_confidence(
                    &dataset,
                    &spec,
                    config.alpha,
                    gamma,
                    tail,
                    config.method,
                    &options,
                )?;
                for limit in &report.limits {
                    csv_out.push_str(&format!(
                        "{},{},{}\n",
                        limit.k,
                        fmt_limit(limit.lower),
                        gamma
                    ));
                }
                doc.reports.push(report);
            }
            if let QuantileChoice::List(list) = &config.quantiles {
                for &k in list {
                    let cutoff = gamma_cutoff(
                        &dataset,
                        &spec,
                        config.alpha,
                        k,
                        config.cutoff_threshold,
                        tail,
                        config.method,
                        config.gamma_resolution,
                    )?;
                    doc.gamma_cutoffs.push(CutoffRow {
                        k,
                        threshold: config.cutoff_threshold,
                        cutoff,
                    });
                }
            }
        }
        Analysis::TwoSided => {
            let null_spec = null_spec_for(config, &dataset)?;
            let ks: Vec<usize> = match ks {
                Some(list) => list,
                None => (1..=dataset.total_units()).collect(),
            };
            let cs: Vec<f64> = if config.thresholds.is_empty() {
                vec![0.0]
            } else {
                config.thresholds.clone()
            };
            let rows = two_sided_batch(
                &dataset,
                &spec,
                TiePolicy::FirstByUnitOrder,
                &ks,
                &cs,
                config.alpha,
                &null_spec,
                config.method,
            )?;
            csv_out.push_str("k,c,p_right,p_left,reject\n");
            for row in &rows {
                csv_out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.outcome.k, row.outcome.c, row.outcome.p_right, row.outcome.p_left,
                    row.outcome.reject
                ));
            }
            doc.two_sided = rows;
        }
    }

    doc.provenance.runtime_secs = started.elapsed().as_secs_f64();
    write_atomic(&config.output_csv, csv_out.as_bytes())?;
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    write_atomic(&config.output_json, json.as_bytes())?;
    Ok(())
}

fn build_score_spec(config: &RunConfig, dataset: &StratifiedDataset) -> Result<RankScoreSpec> {
    match &config.score {
        ScoreChoice::Wilcoxon => Ok(RankScoreSpec::wilcoxon()),
        ScoreChoice::Stephenson => match &config.stephenson_h {
            StephensonChoice::Global(h) => RankScoreSpec::stephenson(*h),
            StephensonChoice::PerStratum(hs) => {
                if hs.len() != dataset.num_strata() {
                    return Err(Error::Config(format!(
                        "stephenson_h lists {} values for {} strata",
                        hs.len(),
                        dataset.num_strata()
                    )));
                }
                RankScoreSpec::stephenson_per_stratum(hs.clone())
            }
        },
        ScoreChoice::Custom(path) => {
            let scores = crate::config::load_custom_scores(path)?;
            let max_n = dataset.strata().iter().map(|s| s.len()).max().unwrap_or(0);
            if scores.len() < max_n {
                return Err(Error::Config(format!(
                    "custom score list has {} entries but the largest stratum has {max_n} units",
                    scores.len()
                )));
            }
            RankScoreSpec::custom(scores)
        }
    }
}

fn null_spec_for(config: &RunConfig, dataset: &StratifiedDataset) -> Result<NullSpec> {
    match config.null {
        NullChoice::Exact => Ok(NullSpec::Exact {
            budget: config.exact_budget,
        }),
        NullChoice::MonteCarlo => Ok(NullSpec::MonteCarlo {
            reps: config.mc_reps,
            seed: config.mc_seed.expect("validated at config build"),
        }),
        NullChoice::Auto => {
            let required = crate::nulldist::joint_assignment_count(dataset);
            if required <= config.exact_budget {
                return Ok(NullSpec::Exact {
                    budget: config.exact_budget,
                });
            }
            match config.mc_seed {
                Some(seed) => {
                    eprintln!(
                        "note: exact null enumeration needs {required} assignments \
                         (budget {}); using Monte Carlo with {} reps",
                        config.exact_budget, config.mc_reps
                    );
                    Ok(NullSpec::MonteCarlo {
                        reps: config.mc_reps,
                        seed,
                    })
                }
                None => Err(Error::Config(format!(
                    "exact null enumeration needs {required} assignments (budget {}); \
                     set mc_seed to fall back to Monte Carlo",
                    config.exact_budget
                ))),
            }
        }
    }
}

fn build_null(
    config: &RunConfig,
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
) -> Result<NullDistribution> {
    null_spec_for(config, dataset)?.build(dataset, spec)
}

fn resolve_tail(config: &RunConfig, dataset: &StratifiedDataset) -> SensitivityTail {
    match config.tail {
        TailChoice::Gaussian => SensitivityTail::Gaussian,
        TailChoice::FiniteSample => SensitivityTail::FiniteSample,
        TailChoice::Auto => {
            let all_pairs = dataset.strata().iter().all(|s| s.len() == 2);
            if all_pairs || dataset.num_strata() < config.tail_threshold {
                SensitivityTail::FiniteSample
            } else {
                SensitivityTail::Gaussian
            }
        }
    }
}

fn fmt_limit(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

fn hash_hex(canonical: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}
