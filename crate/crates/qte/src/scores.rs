//! Rank-score functions (Wilcoxon, Stephenson, custom tables), tie-ranking
//! policies, and evaluation of stratified rank-score statistics.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::data::{Stratum, StratifiedDataset};
use crate::{Error, Result};

/// How tied outcomes are ordered before the "first" ranking method applies.
///
/// `FirstByUnitOrder` breaks ties by unit position alone (the paper's
/// "random" method once the unit order has been seeded-permuted).
/// `ControlsFirst` gives control units the smaller ranks within a tie, so
/// treated units get the larger scores; it yields the deterministic lower
/// p-value bound. `TreatedFirst` is the mirror image and yields the upper
/// bound, which is a valid p-value regardless of unit ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    FirstByUnitOrder,
    ControlsFirst,
    TreatedFirst,
}

/// Stephenson subset-size parameter: one h for every stratum, or one per
/// stratum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StephensonH {
    Global(u32),
    PerStratum(Vec<u32>),
}

impl StephensonH {
    fn for_stratum(&self, stratum_index: usize) -> Result<u32> {
        match self {
            StephensonH::Global(h) => Ok(*h),
            StephensonH::PerStratum(hs) => hs.get(stratum_index).copied().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no Stephenson h for stratum index {stratum_index} (have {})",
                    hs.len()
                ))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreKind {
    /// Identity scores: rank r scores r.
    Wilcoxon,
    /// Binomial scores C(r-1, h-1), zero for r <= h-1. Sensitive to large
    /// effects on a few units; h = 2 is the Wilcoxon statistic shifted by
    /// the treated count.
    Stephenson(StephensonH),
    /// Explicit per-rank score list; a stratum of size n uses the first n
    /// entries. The full list must be nondecreasing.
    Custom(Vec<f64>),
}

/// A per-stratum nondecreasing score function together with a memoized table
/// per stratum size. Cheap to clone; clones share the cache.
#[derive(Debug, Clone)]
pub struct RankScoreSpec {
    kind: ScoreKind,
    cache: Arc<RwLock<HashMap<(u32, usize), Arc<Vec<f64>>>>>,
}

impl RankScoreSpec {
    pub fn wilcoxon() -> Self {
        Self::from_kind(ScoreKind::Wilcoxon)
    }

    pub fn stephenson(h: u32) -> Result<Self> {
        if h < 2 {
            return Err(Error::InvalidArgument(format!(
                "Stephenson h must be >= 2, got {h}"
            )));
        }
        Ok(Self::from_kind(ScoreKind::Stephenson(StephensonH::Global(
            h,
        ))))
    }

    pub fn stephenson_per_stratum(hs: Vec<u32>) -> Result<Self> {
        if let Some(&bad) = hs.iter().find(|&&h| h < 2) {
            return Err(Error::InvalidArgument(format!(
                "Stephenson h must be >= 2, got {bad}"
            )));
        }
        if hs.is_empty() {
            return Err(Error::InvalidArgument(
                "per-stratum Stephenson h list is empty".to_string(),
            ));
        }
        Ok(Self::from_kind(ScoreKind::Stephenson(
            StephensonH::PerStratum(hs),
        )))
    }

    /// Custom scores must be nondecreasing; each stratum of size n uses the
    /// first n entries.
    pub fn custom(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidArgument(
                "custom score list is empty".to_string(),
            ));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "custom scores must be finite".to_string(),
            ));
        }
        if scores.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "custom scores must be nondecreasing in rank".to_string(),
            ));
        }
        Ok(Self::from_kind(ScoreKind::Custom(scores)))
    }

    fn from_kind(kind: ScoreKind) -> Self {
        RankScoreSpec {
            kind,
            cache: Arc::new(RwLock::new(HashMap::new())),
        }
    }

    pub fn kind(&self) -> &ScoreKind {
        &self.kind
    }

    /// The score table phi_s(1..=n) for the given stratum.
    pub fn scores(&self, stratum_index: usize, n: usize) -> Result<Arc<Vec<f64>>> {
        match &self.kind {
            ScoreKind::Wilcoxon => self.cached(0, n, |n| (1..=n).map(|r| r as f64).collect()),
            ScoreKind::Stephenson(h) => {
                let h = h.for_stratum(stratum_index)?;
                self.cached(h, n, |n| stephenson_table(n, h))
            }
            ScoreKind::Custom(list) => {
                if n > list.len() {
                    return Err(Error::InvalidArgument(format!(
                        "custom score list has {} entries but a stratum has {n} units",
                        list.len()
                    )));
                }
                self.cached(0, n, |n| list[..n].to_vec())
            }
        }
    }

    fn cached(
        &self,
        key: u32,
        n: usize,
        build: impl FnOnce(usize) -> Vec<f64>,
    ) -> Result<Arc<Vec<f64>>> {
        if let Some(hit) = self.cache.read().unwrap().get(&(key, n)) {
            return Ok(hit.clone());
        }
        let table = Arc::new(build(n));
        self.cache
            .write()
            .unwrap()
            .entry((key, n))
            .or_insert_with(|| table.clone());
        Ok(table)
    }
}

/// C(r-1, h-1) for r > h-1, else 0, for ranks r = 1..=n.
fn stephenson_table(n: usize, h: u32) -> Vec<f64> {
    (1..=n)
        .map(|r| {
            if r as u64 > h as u64 - 1 {
                binomial(r as u64 - 1, h as u64 - 1)
            } else {
                0.0
            }
        })
        .collect()
}

/// Binomial coefficient with exact integer arithmetic while it fits, and a
/// log-gamma fallback above that (the scores grow combinatorially in h and
/// the stratum size).
fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        match acc
            .checked_mul((n - k + i) as u128)
            .map(|v| v / i as u128)
        {
            Some(v) => acc = v,
            None => {
                use statrs::function::gamma::ln_gamma;
                let ln = ln_gamma(n as f64 + 1.0)
                    - ln_gamma(k as f64 + 1.0)
                    - ln_gamma((n - k) as f64 + 1.0);
                return ln.exp();
            }
        }
    }
    acc as f64
}

/// Ranks 1..=n of `outcomes`, increasing in outcome, ties broken per policy
/// and then by unit order. The result is always a permutation of 1..=n.
pub fn ranks(outcomes: &[f64], assignments: &[bool], policy: TiePolicy) -> Result<Vec<usize>> {
    if outcomes.len() != assignments.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outcomes vs {} assignments",
            outcomes.len(),
            assignments.len()
        )));
    }
    let n = outcomes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        match outcomes[i].total_cmp(&outcomes[j]) {
            Ordering::Equal => {}
            other => return other,
        }
        let by_policy = match policy {
            TiePolicy::FirstByUnitOrder => Ordering::Equal,
            // Controls (z = false) sort before treated within a tie.
            TiePolicy::ControlsFirst => assignments[i].cmp(&assignments[j]),
            TiePolicy::TreatedFirst => assignments[j].cmp(&assignments[i]),
        };
        by_policy.then(i.cmp(&j))
    });
    let mut out = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos + 1;
    }
    Ok(out)
}

/// Rank-sum statistic for one stratum: the sum of scores of treated-unit
/// ranks in the imputed control outcomes.
pub fn stratum_statistic(
    stratum: &Stratum,
    imputed_controls: &[f64],
    spec: &RankScoreSpec,
    stratum_index: usize,
    policy: TiePolicy,
) -> Result<f64> {
    if imputed_controls.len() != stratum.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} imputed outcomes for a stratum of {} units",
            imputed_controls.len(),
            stratum.len()
        )));
    }
    let r = ranks(imputed_controls, stratum.assignments(), policy)?;
    let phi = spec.scores(stratum_index, stratum.len())?;
    Ok(stratum
        .assignments()
        .iter()
        .zip(&r)
        .filter(|(&z, _)| z)
        .map(|(_, &rank)| phi[rank - 1])
        .sum())
}

/// Stratified rank-sum statistic: sum of per-stratum statistics.
/// `imputed_controls` is flat in unit order across strata (length N).
pub fn stratified_statistic(
    dataset: &StratifiedDataset,
    imputed_controls: &[f64],
    spec: &RankScoreSpec,
    policy: TiePolicy,
) -> Result<f64> {
    if imputed_controls.len() != dataset.total_units() {
        return Err(Error::ShapeMismatch(format!(
            "{} imputed outcomes for {} units",
            imputed_controls.len(),
            dataset.total_units()
        )));
    }
    let mut total = 0.0;
    let mut offset = 0;
    for (s, stratum) in dataset.strata().iter().enumerate() {
        let slice = &imputed_controls[offset..offset + stratum.len()];
        total += stratum_statistic(stratum, slice, spec, s, policy)?;
        offset += stratum.len();
    }
    Ok(total)
}
