//! Run configuration: a flat key=value file plus equivalent command-line
//! flags, flags taking precedence. No nested schema, for scriptability.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::inference::Method;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Scre,
    Sensitivity,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreChoice {
    Wilcoxon,
    Stephenson,
    Custom(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StephensonChoice {
    Global(u32),
    PerStratum(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullChoice {
    /// Exact when the enumeration budget allows, Monte Carlo otherwise.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailChoice {
    /// Finite-sample bound for pair designs and moderate set counts,
    /// Gaussian for large ones.
    Auto,
    Gaussian,
    FiniteSample,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SwitchChoice {
    Off,
    All,
    Mask(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantileChoice {
    All,
    List(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub analysis: Analysis,
    pub score: ScoreChoice,
    pub stephenson_h: StephensonChoice,
    pub alpha: f64,
    pub method: Method,
    pub tie_seed: Option<u64>,
    pub switch_labels: SwitchChoice,
    pub null: NullChoice,
    pub mc_reps: u64,
    pub mc_seed: Option<u64>,
    pub exact_budget: u128,
    pub gammas: Vec<f64>,
    pub tail: TailChoice,
    pub tail_threshold: usize,
    pub quantiles: QuantileChoice,
    pub thresholds: Vec<f64>,
    pub cutoff_threshold: f64,
    pub gamma_resolution: f64,
    pub output_json: PathBuf,
    pub output_csv: PathBuf,
    pub threads: Option<usize>,
    /// Canonical key=value form, hashed into the report provenance.
    pub canonical: String,
}

const KNOWN_KEYS: &[&str] = &[
    "analysis",
    "score",
    "stephenson_h",
    "custom_scores",
    "alpha",
    "method",
    "tie_seed",
    "switch_labels",
    "null",
    "mc_reps",
    "mc_seed",
    "exact_budget",
    "gamma",
    "tail",
    "tail_threshold",
    "quantiles",
    "thresholds",
    "cutoff_threshold",
    "gamma_resolution",
    "output_json",
    "output_csv",
    "threads",
];

/// Accumulates key=value settings from a file and flag overrides, then
/// validates into a [`RunConfig`].
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    map: BTreeMap<String, String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    idx + 1
                )));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn build(&self) -> Result<RunConfig> {
        let analysis = match self.get("analysis").unwrap_or("scre") {
            "scre" => Analysis::Scre,
            "sensitivity" => Analysis::Sensitivity,
            "two_sided" | "two-sided" => Analysis::TwoSided,
            other => {
                return Err(Error::Config(format!(
                    "analysis must be scre|sensitivity|two_sided, got {other:?}"
                )))
            }
        };
        let score = match self.get("score").unwrap_or("wilcoxon") {
            "wilcoxon" => ScoreChoice::Wilcoxon,
            "stephenson" => ScoreChoice::Stephenson,
            "custom" => {
                let path = self.get("custom_scores").ok_or_else(|| {
                    Error::Config("score=custom requires custom_scores=<path>".to_string())
                })?;
                ScoreChoice::Custom(PathBuf::from(path))
            }
            other => {
                return Err(Error::Config(format!(
                    "score must be wilcoxon|stephenson|custom, got {other:?}"
                )))
            }
        };
        let stephenson_h = match self.get("stephenson_h") {
            None => StephensonChoice::Global(4),
            Some(raw) => {
                let parts: Vec<u32> = parse_list(raw, "stephenson_h")?;
                match parts.as_slice() {
                    [] => return Err(Error::Config("stephenson_h is empty".to_string())),
                    [one] => StephensonChoice::Global(*one),
                    _ => StephensonChoice::PerStratum(parts),
                }
            }
        };
        let alpha: f64 = parse_scalar(self.get("alpha").unwrap_or("0.1"), "alpha")?;
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let method = match self.get("method").unwrap_or("ilp") {
            "ilp" => Method::IlpExact,
            "lp" => Method::LpConservative,
            other => {
                return Err(Error::Config(format!(
                    "method must be ilp|lp, got {other:?}"
                )))
            }
        };
        let tie_seed = self
            .get("tie_seed")
            .map(|raw| parse_scalar::<u64>(raw, "tie_seed"))
            .transpose()?;
        let switch_labels = match self.get("switch_labels").unwrap_or("false") {
            "false" | "off" | "0" => SwitchChoice::Off,
            "true" | "on" | "all" | "1" => SwitchChoice::All,
            raw => {
                let bits: Vec<u8> = parse_list(raw, "switch_labels")?;
                if bits.iter().any(|&b| b > 1) {
                    return Err(Error::Config(
                        "switch_labels mask entries must be 0 or 1".to_string(),
                    ));
                }
                SwitchChoice::Mask(bits.into_iter().map(|b| b == 1).collect())
            }
        };
        let null = match self.get("null").unwrap_or("auto") {
            "auto" => NullChoice::Auto,
            "exact" => NullChoice::Exact,
            "mc" => NullChoice::MonteCarlo,
            other => {
                return Err(Error::Config(format!(
                    "null must be auto|exact|mc, got {other:?}"
                )))
            }
        };
        let mc_reps: u64 = parse_scalar(
            self.get("mc_reps")
                .unwrap_or(&crate::nulldist::DEFAULT_MC_REPS.to_string()),
            "mc_reps",
        )?;
        if mc_reps == 0 {
            return Err(Error::Config("mc_reps must be >= 1".to_string()));
        }
        let mc_seed = self
            .get("mc_seed")
            .map(|raw| parse_scalar::<u64>(raw, "mc_seed"))
            .transpose()?;
        if null == NullChoice::MonteCarlo && mc_seed.is_none() {
            return Err(Error::Config(
                "null=mc requires mc_seed for reproducibility".to_string(),
            ));
        }
        let exact_budget: u128 = parse_scalar(
            self.get("exact_budget")
                .unwrap_or(&crate::nulldist::DEFAULT_EXACT_BUDGET.to_string()),
            "exact_budget",
        )?;
        let gammas: Vec<f64> = match self.get("gamma") {
            None => vec![1.0],
            Some(raw) => parse_list(raw, "gamma")?,
        };
        if gammas.is_empty() || gammas.iter().any(|&g| !(g >= 1.0)) {
            return Err(Error::Config("gamma values must be >= 1".to_string()));
        }
        let tail = match self.get("tail").unwrap_or("auto") {
            "auto" => TailChoice::Auto,
            "gaussian" => TailChoice::Gaussian,
            "finite" => TailChoice::FiniteSample,
            other => {
                return Err(Error::Config(format!(
                    "tail must be auto|gaussian|finite, got {other:?}"
                )))
            }
        };
        if analysis == Analysis::Sensitivity && tail == TailChoice::Gaussian && alpha > 0.5 {
            return Err(Error::Config(
                "the Gaussian sensitivity tail requires alpha <= 0.5".to_string(),
            ));
        }
        let tail_threshold: usize =
            parse_scalar(self.get("tail_threshold").unwrap_or("100"), "tail_threshold")?;
        let quantiles = match self.get("quantiles").unwrap_or("all") {
            "all" => QuantileChoice::All,
            raw => QuantileChoice::List(parse_list(raw, "quantiles")?),
        };
        let thresholds: Vec<f64> = match self.get("thresholds") {
            None => Vec::new(),
            Some(raw) => parse_list(raw, "thresholds")?,
        };
        let cutoff_threshold: f64 =
            parse_scalar(self.get("cutoff_threshold").unwrap_or("0"), "cutoff_threshold")?;
        let gamma_resolution: f64 = parse_scalar(
            self.get("gamma_resolution").unwrap_or("0.01"),
            "gamma_resolution",
        )?;
        if !(gamma_resolution > 0.0) {
            return Err(Error::Config("gamma_resolution must be positive".to_string()));
        }
        let threads = self
            .get("threads")
            .map(|raw| parse_scalar::<usize>(raw, "threads"))
            .transpose()?;

        let canonical = self
            .map
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\n");

        Ok(RunConfig {
            analysis,
            score,
            stephenson_h,
            alpha,
            method,
            tie_seed,
            switch_labels,
            null,
            mc_reps,
            mc_seed,
            exact_budget,
            gammas,
            tail,
            tail_threshold,
            quantiles,
            thresholds,
            cutoff_threshold,
            gamma_resolution,
            output_json: PathBuf::from(self.get("output_json").unwrap_or("report.json")),
            output_csv: PathBuf::from(self.get("output_csv").unwrap_or("limits.csv")),
            threads,
            canonical,
        })
    }
}

fn parse_scalar<T: std::str::FromStr>(raw: &str, key: &str) -> Result<T> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("could not parse {key}={raw:?}")))
}

fn parse_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| Error::Config(format!("could not parse {key} entry {s:?}")))
        })
        .collect()
}

/// Loads a custom score table: one nondecreasing score per line, blank lines
/// and '#' comments ignored; a stratum of size n uses the first n entries.
pub fn load_custom_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut scores = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: f64 = line.parse().map_err(|_| {
            Error::Config(format!(
                "{}:{}: could not parse score {line:?}",
                path.display(),
                idx + 1
            ))
        })?;
        scores.push(value);
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        let config = ConfigBuilder::new().build().unwrap();
        assert_eq!(config.analysis, Analysis::Scre);
        assert_eq!(config.alpha, 0.1);
        assert_eq!(config.method, Method::IlpExact);
        assert_eq!(config.quantiles, QuantileChoice::All);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut b = ConfigBuilder::new();
        assert!(b.set("no_such_key", "1").is_err());
    }

    #[test]
    fn mc_requires_seed() {
        let mut b = ConfigBuilder::new();
        b.set("null", "mc").unwrap();
        assert!(b.build().is_err());
        b.set("mc_seed", "42").unwrap();
        assert!(b.build().is_ok());
    }

    #[test]
    fn gaussian_alpha_capped() {
        let mut b = ConfigBuilder::new();
        b.set("analysis", "sensitivity").unwrap();
        b.set("tail", "gaussian").unwrap();
        b.set("alpha", "0.6").unwrap();
        assert!(b.build().is_err());
    }

    #[test]
    fn per_stratum_h_and_mask_parse() {
        let mut b = ConfigBuilder::new();
        b.set("score", "stephenson").unwrap();
        b.set("stephenson_h", "4, 3, 5").unwrap();
        b.set("switch_labels", "1,0,1").unwrap();
        let config = b.build().unwrap();
        assert_eq!(
            config.stephenson_h,
            StephensonChoice::PerStratum(vec![4, 3, 5])
        );
        assert_eq!(
            config.switch_labels,
            SwitchChoice::Mask(vec![true, false, true])
        );
    }

    #[test]
    fn canonical_form_is_sorted_and_stable() {
        let mut a = ConfigBuilder::new();
        a.set("alpha", "0.2").unwrap();
        a.set("method", "lp").unwrap();
        let mut b = ConfigBuilder::new();
        b.set("method", "lp").unwrap();
        b.set("alpha", "0.2").unwrap();
        assert_eq!(a.build().unwrap().canonical, b.build().unwrap().canonical);
    }
}
