//! Per-stratum minima of the rank-score statistic under a quantile null.
//!
//! For a fixed threshold `c`, `t[l]` in a [`MinStatTable`] is the smallest
//! value the stratum statistic can take when at most `l` units of the
//! stratum may have individual effects greater than `c`. The minimizer has a
//! closed form: the `l` treated units with the largest observed outcomes are
//! hypothesized to have effectively infinite effects (sending their imputed
//! control outcomes below every control unit), and everyone else gets effect
//! exactly `c`. "Infinite" is realized by a finite surrogate constant that
//! strictly exceeds every treated-minus-control outcome difference.

use rayon::prelude::*;

use crate::data::{Stratum, StratifiedDataset};
use crate::scores::{ranks, stratum_statistic, RankScoreSpec, TiePolicy};
use crate::Result;

/// Minimized statistics and increments for one threshold.
#[derive(Debug, Clone)]
pub struct MinStatTable {
    threshold: f64,
    policy: TiePolicy,
    infinity_surrogate: f64,
    strata: Vec<StratumMin>,
}

#[derive(Debug, Clone)]
pub struct StratumMin {
    /// t[l] for l = 0..=n, nonincreasing, constant for l >= treated count.
    pub t: Vec<f64>,
    /// deltas[j-1] = t[j-1] - t[j] >= 0 for j = 1..=n.
    pub deltas: Vec<f64>,
}

impl MinStatTable {
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn policy(&self) -> TiePolicy {
        self.policy
    }

    pub fn infinity_surrogate(&self) -> f64 {
        self.infinity_surrogate
    }

    pub fn strata(&self) -> &[StratumMin] {
        &self.strata
    }

    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    /// Total number of units N.
    pub fn total_units(&self) -> usize {
        self.strata.iter().map(|s| s.deltas.len()).sum()
    }

    /// Sum over strata of t[0]: the statistic at constant effect c.
    pub fn total_at_zero(&self) -> f64 {
        self.strata.iter().map(|s| s.t[0]).sum()
    }
}

/// Surrogate for an infinite effect: any constant strictly exceeding the
/// difference between the maximum treated and minimum control outcome makes
/// a pushed unit rank below every control in its stratum. The margin of
/// `1 + |c|` keeps one constant valid across an entire threshold grid.
fn infinity_surrogate(dataset: &StratifiedDataset, c: f64) -> f64 {
    let mut max_treated = f64::NEG_INFINITY;
    let mut min_control = f64::INFINITY;
    for stratum in dataset.strata() {
        for (&z, &y) in stratum.assignments().iter().zip(stratum.outcomes()) {
            if z {
                max_treated = max_treated.max(y);
            } else {
                min_control = min_control.min(y);
            }
        }
    }
    let spread = if max_treated.is_finite() && min_control.is_finite() {
        max_treated - min_control
    } else {
        // No treated or no control units anywhere; any positive constant
        // works since there is nothing to outrank.
        0.0
    };
    spread.max(0.0) + 1.0 + c.abs()
}

/// Builds the table of t[l] and increments for every stratum at threshold c.
pub fn build_min_table(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    c: f64,
) -> Result<MinStatTable> {
    let surrogate = infinity_surrogate(dataset, c);
    let strata: Vec<StratumMin> = dataset
        .strata()
        .par_iter()
        .enumerate()
        .map(|(s, stratum)| stratum_min(stratum, spec, s, policy, c, surrogate))
        .collect::<Result<_>>()?;
    Ok(MinStatTable {
        threshold: c,
        policy,
        infinity_surrogate: surrogate,
        strata,
    })
}

fn stratum_min(
    stratum: &Stratum,
    spec: &RankScoreSpec,
    stratum_index: usize,
    policy: TiePolicy,
    c: f64,
    surrogate: f64,
) -> Result<StratumMin> {
    let n = stratum.len();
    let m = stratum.treated_count();

    // Treated units ordered by observed rank, largest first: the push order.
    let observed_ranks = ranks(stratum.outcomes(), stratum.assignments(), policy)?;
    let mut treated: Vec<usize> = (0..n).filter(|&i| stratum.assignments()[i]).collect();
    treated.sort_by(|&i, &j| observed_ranks[j].cmp(&observed_ranks[i]));

    let mut imputed: Vec<f64> = stratum
        .outcomes()
        .iter()
        .zip(stratum.assignments())
        .map(|(&y, &z)| if z { y - c } else { y })
        .collect();

    let mut t = Vec::with_capacity(n + 1);
    t.push(stratum_statistic(stratum, &imputed, spec, stratum_index, policy)?);
    for l in 1..=n {
        if l <= m {
            let unit = treated[l - 1];
            imputed[unit] = stratum.outcomes()[unit] - surrogate;
            t.push(stratum_statistic(stratum, &imputed, spec, stratum_index, policy)?);
        } else {
            // All treated units already pushed; the minimum cannot drop further.
            t.push(t[m]);
        }
    }

    let deltas = (1..=n)
        .map(|l| {
            let d = t[l - 1] - t[l];
            debug_assert!(d > -1e-9, "monotonicity violated: delta {d}");
            d.max(0.0)
        })
        .collect();
    Ok(StratumMin { t, deltas })
}

/// Precomputed per-stratum tables for every threshold regime.
///
/// A stratum's minimized statistics change only when `c` crosses one of its
/// own treated-minus-control outcome differences, so each stratum takes at
/// most `2 * (number of own differences) + 1` distinct table values over all
/// of `c`. The confidence-set inverter probes thousands of thresholds;
/// assembling each probe's table from this family is a binary search per
/// stratum instead of a fresh build.
#[derive(Debug, Clone)]
pub struct MinTableFamily {
    policy: TiePolicy,
    surrogate_base: f64,
    strata: Vec<StratumFamily>,
}

#[derive(Debug, Clone)]
struct StratumFamily {
    /// Sorted distinct treated-minus-control differences of this stratum.
    cuts: Vec<f64>,
    /// Table exactly at cuts[i].
    at_cut: Vec<StratumMin>,
    /// Table on the open interval between cuts (index i covers the interval
    /// below cuts[i]; the last entry covers everything above).
    between: Vec<StratumMin>,
}

impl MinTableFamily {
    pub fn build(
        dataset: &StratifiedDataset,
        spec: &RankScoreSpec,
        policy: TiePolicy,
    ) -> Result<Self> {
        let strata = dataset
            .strata()
            .par_iter()
            .enumerate()
            .map(|(s, stratum)| {
                let mut cuts = Vec::new();
                for (&zi, &yi) in stratum.assignments().iter().zip(stratum.outcomes()) {
                    if !zi {
                        continue;
                    }
                    for (&zj, &yj) in stratum.assignments().iter().zip(stratum.outcomes()) {
                        if !zj {
                            cuts.push(yi - yj);
                        }
                    }
                }
                cuts.sort_unstable_by(f64::total_cmp);
                cuts.dedup_by(|a, b| a.total_cmp(b).is_eq());

                let spread = stratum_spread(stratum);
                let build_at = |c: f64| -> Result<StratumMin> {
                    stratum_min(stratum, spec, s, policy, c, spread + 1.0 + c.abs())
                };
                let mut at_cut = Vec::with_capacity(cuts.len());
                for &c in &cuts {
                    at_cut.push(build_at(c)?);
                }
                let mut between = Vec::with_capacity(cuts.len() + 1);
                if cuts.is_empty() {
                    between.push(build_at(0.0)?);
                } else {
                    for i in 0..=cuts.len() {
                        let rep = if i == 0 {
                            (cuts[0] - 1.0).min(cuts[0].next_down())
                        } else if i == cuts.len() {
                            (cuts[i - 1] + 1.0).max(cuts[i - 1].next_up())
                        } else {
                            let mid = cuts[i - 1] + (cuts[i] - cuts[i - 1]) / 2.0;
                            // An empty float interval is never selected by
                            // lookups; any in-range value will do.
                            if mid > cuts[i - 1] && mid < cuts[i] {
                                mid
                            } else {
                                cuts[i - 1]
                            }
                        };
                        between.push(build_at(rep)?);
                    }
                }
                Ok(StratumFamily {
                    cuts,
                    at_cut,
                    between,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let spread = dataset_spread(dataset);
        Ok(MinTableFamily {
            policy,
            surrogate_base: spread + 1.0,
            strata,
        })
    }

    pub fn policy(&self) -> TiePolicy {
        self.policy
    }

    /// The minimized-statistic table at threshold c, assembled from the
    /// precomputed regimes.
    pub fn at(&self, c: f64) -> MinStatTable {
        let strata = self
            .strata
            .iter()
            .map(|family| {
                match family.cuts.binary_search_by(|cut| cut.total_cmp(&c)) {
                    Ok(i) => family.at_cut[i].clone(),
                    Err(i) => family.between[i.min(family.between.len() - 1)].clone(),
                }
            })
            .collect();
        MinStatTable {
            threshold: c,
            policy: self.policy,
            infinity_surrogate: self.surrogate_base + c.abs(),
            strata,
        }
    }
}

fn stratum_spread(stratum: &Stratum) -> f64 {
    let mut max_treated = f64::NEG_INFINITY;
    let mut min_control = f64::INFINITY;
    for (&z, &y) in stratum.assignments().iter().zip(stratum.outcomes()) {
        if z {
            max_treated = max_treated.max(y);
        } else {
            min_control = min_control.min(y);
        }
    }
    if max_treated.is_finite() && min_control.is_finite() {
        (max_treated - min_control).max(0.0)
    } else {
        0.0
    }
}

fn dataset_spread(dataset: &StratifiedDataset) -> f64 {
    dataset
        .strata()
        .iter()
        .map(stratum_spread)
        .fold(0.0, f64::max)
}

/// Brute-force check of the closed form: over every way of assigning the
/// surrogate-infinite effect to at most `l` treated units (and `c` to the
/// rest), the smallest statistic must match `t[l]`. Intended for small
/// strata; cost grows as 2^(treated count) per stratum.
pub fn verify_min_table(
    table: &MinStatTable,
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
) -> Result<bool> {
    let c = table.threshold();
    let surrogate = table.infinity_surrogate();
    for (s, (stratum, min)) in dataset.strata().iter().zip(table.strata()).enumerate() {
        let n = stratum.len();
        let treated: Vec<usize> = (0..n).filter(|&i| stratum.assignments()[i]).collect();
        let m = treated.len();
        let mut best = vec![f64::INFINITY; n + 1];
        for subset in 0u64..(1 << m) {
            let pushed = subset.count_ones() as usize;
            let imputed: Vec<f64> = stratum
                .outcomes()
                .iter()
                .zip(stratum.assignments())
                .enumerate()
                .map(|(i, (&y, &z))| {
                    if !z {
                        y
                    } else {
                        let pos = treated.iter().position(|&t| t == i).unwrap();
                        if subset >> pos & 1 == 1 {
                            y - surrogate
                        } else {
                            y - c
                        }
                    }
                })
                .collect();
            let value = stratum_statistic(stratum, &imputed, spec, s, policy)?;
            // A subset of size p is feasible for every level l >= p.
            for l in pushed..=n {
                if value < best[l] {
                    best[l] = value;
                }
            }
        }
        for l in 0..=n {
            if (best[l] - min.t[l]).abs() > 1e-9 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
