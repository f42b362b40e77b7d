//! Experimental data model: strata of units with binary assignments and
//! real outcomes, plus the dataset-level transformations (label switching,
//! seeded unit permutation) that the inference machinery builds on.
//!
//! All types are immutable after construction; operations are pure functions
//! returning new values, so everything here is safe to share across threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Assignment mechanism the dataset is analyzed under.
///
/// `Scre` is a stratified completely randomized experiment: within each
/// stratum a fixed number of units is treated, uniformly at random,
/// independently across strata. `MatchedSets` marks data from a matched
/// observational study, where each set must contain exactly one treated or
/// exactly one control unit (either orientation is fine; label switching
/// converts between them).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Scre,
    MatchedSets,
}

/// One stratum (or matched set): unit order is significant, since it is the
/// tie-breaking permutation for the "first" ranking method.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    assignments: Vec<bool>,
    outcomes: Vec<f64>,
}

impl Stratum {
    /// Builds a stratum from parallel assignment/outcome sequences.
    pub fn new(assignments: Vec<bool>, outcomes: Vec<f64>) -> Result<Self> {
        if assignments.len() != outcomes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} assignments vs {} outcomes",
                assignments.len(),
                outcomes.len()
            )));
        }
        Ok(Stratum {
            assignments,
            outcomes,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Number of treated units m.
    pub fn treated_count(&self) -> usize {
        self.assignments.iter().filter(|&&z| z).count()
    }

    pub fn assignments(&self) -> &[bool] {
        &self.assignments
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }
}

/// A stratified dataset: the (Z, Y, n) triple of the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedDataset {
    strata: Vec<Stratum>,
    design: Design,
}

impl StratifiedDataset {
    pub fn new(strata: Vec<Stratum>, design: Design) -> Self {
        StratifiedDataset { strata, design }
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    /// Total number of units N across all strata.
    pub fn total_units(&self) -> usize {
        self.strata.iter().map(|s| s.len()).sum()
    }

    pub fn total_treated(&self) -> usize {
        self.strata.iter().map(|s| s.treated_count()).sum()
    }

    /// Flattens assignments in stratum order, preserving unit order.
    pub fn flat_assignments(&self) -> Vec<bool> {
        self.strata
            .iter()
            .flat_map(|s| s.assignments.iter().copied())
            .collect()
    }

    /// Flattens outcomes in stratum order, preserving unit order.
    pub fn flat_outcomes(&self) -> Vec<f64> {
        self.strata
            .iter()
            .flat_map(|s| s.outcomes.iter().copied())
            .collect()
    }

    /// Returns a copy with the requested design tag.
    pub fn with_design(&self, design: Design) -> Self {
        StratifiedDataset {
            strata: self.strata.clone(),
            design,
        }
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationItem {
    pub severity: Severity,
    pub message: String,
}

/// Report-valued outcome of [`validate`]: never fails, lists findings.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        !self
            .items
            .iter()
            .any(|item| item.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &ValidationItem> {
        self.items
            .iter()
            .filter(|item| item.severity == Severity::Error)
    }

    fn push(&mut self, severity: Severity, message: String) {
        self.items.push(ValidationItem { severity, message });
    }

    pub fn to_message(&self) -> String {
        self.items
            .iter()
            .map(|item| {
                let tag = match item.severity {
                    Severity::Error => "error",
                    Severity::Warning => "warning",
                };
                format!("{tag}: {}", item.message)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Checks the dataset invariants.
///
/// Empty strata and non-finite outcomes are errors. A `MatchedSets` dataset
/// whose set violates the one-treated-or-one-control rule gets a warning
/// here; the sensitivity entry points reject such data outright.
pub fn validate(dataset: &StratifiedDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    if dataset.strata.is_empty() {
        report.push(Severity::Error, "dataset has no strata".to_string());
    }
    for (s, stratum) in dataset.strata.iter().enumerate() {
        if stratum.is_empty() {
            report.push(Severity::Error, format!("stratum {} is empty", s + 1));
            continue;
        }
        for (i, &y) in stratum.outcomes.iter().enumerate() {
            if !y.is_finite() {
                report.push(
                    Severity::Error,
                    format!("stratum {} unit {} outcome {y} is not finite", s + 1, i + 1),
                );
            }
        }
        if dataset.design == Design::MatchedSets {
            let m = stratum.treated_count();
            let n = stratum.len();
            if m != 1 && n - m != 1 {
                report.push(
                    Severity::Warning,
                    format!(
                        "matched set {} has {m} treated and {} control units; \
                         sensitivity analysis requires exactly one treated or one control",
                        s + 1,
                        n - m
                    ),
                );
            }
        }
    }
    report
}

/// Switches treatment labels and outcome signs (z -> 1-z, y -> -y) in the
/// strata selected by `mask`. Applying it twice is the identity.
pub fn switch_labels_masked(dataset: &StratifiedDataset, mask: &[bool]) -> Result<StratifiedDataset> {
    if mask.len() != dataset.num_strata() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} entries for {} strata",
            mask.len(),
            dataset.num_strata()
        )));
    }
    let strata = dataset
        .strata
        .iter()
        .zip(mask)
        .map(|(stratum, &flip)| {
            if flip {
                Stratum {
                    assignments: stratum.assignments.iter().map(|&z| !z).collect(),
                    outcomes: stratum.outcomes.iter().map(|&y| -y).collect(),
                }
            } else {
                stratum.clone()
            }
        })
        .collect();
    Ok(StratifiedDataset {
        strata,
        design: dataset.design,
    })
}

/// Global label switching: every stratum flipped. This preserves each unit's
/// individual effect while exchanging the roles of imputed treatment and
/// control potential outcomes.
pub fn switch_labels(dataset: &StratifiedDataset) -> StratifiedDataset {
    let mask = vec![true; dataset.num_strata()];
    switch_labels_masked(dataset, &mask).expect("mask length matches by construction")
}

/// Reorders units within each stratum by a seeded pseudorandom permutation.
///
/// This realizes the "random" tie-ranking method reproducibly: the permuted
/// unit order becomes the tie-breaking order for `TiePolicy::FirstByUnitOrder`.
pub fn permute_units(dataset: &StratifiedDataset, seed: u64) -> StratifiedDataset {
    let strata = dataset
        .strata
        .iter()
        .enumerate()
        .map(|(s, stratum)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64 + 1);
            let mut order: Vec<usize> = (0..stratum.len()).collect();
            order.shuffle(&mut rng);
            Stratum {
                assignments: order.iter().map(|&i| stratum.assignments[i]).collect(),
                outcomes: order.iter().map(|&i| stratum.outcomes[i]).collect(),
            }
        })
        .collect();
    StratifiedDataset {
        strata,
        design: dataset.design,
    }
}

/// A null hypothesis on an effect quantile: the k-th smallest individual
/// effect is at most `c`, equivalently at most N-k units have effects
/// greater than `c`. `k = 0` is the vacuous hypothesis (the 0-th quantile
/// is -infinity by convention).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectHypothesis {
    pub k: usize,
    pub c: f64,
}

impl EffectHypothesis {
    pub fn new(k: usize, c: f64, total_units: usize) -> Result<Self> {
        if k > total_units {
            return Err(Error::KOutOfRange {
                k,
                n: total_units,
            });
        }
        Ok(EffectHypothesis { k, c })
    }
}
