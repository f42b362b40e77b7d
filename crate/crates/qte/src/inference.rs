//! Valid p-values for quantile nulls, deterministic tie-ranking bounds, and
//! inversion into simultaneously valid confidence sets.
//!
//! The p-value for "the k-th smallest effect is at most c" is the null tail
//! evaluated at the minimized statistic. It is nondecreasing in c and
//! nonincreasing in k, so test inversion reduces to a monotone search; the
//! p-surface is a step function of c whose jumps happen only where some
//! within-stratum treated-minus-control difference is crossed, which makes
//! the candidate threshold set finite and the search exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{switch_labels_masked, StratifiedDataset};
use crate::knapsack::{
    dp_objectives, greedy_objectives_window, solve_dp_ilp, solve_greedy_lp,
};
use crate::minstat::{build_min_table, MinStatTable, MinTableFamily};
use crate::nulldist::{exact_null_with_budget, mc_null, NullDistribution, TailFunction};
use crate::scores::{RankScoreSpec, TiePolicy};
use crate::{Error, Result};

/// Which optimizer backs the p-value: the exact integer program or its
/// conservative LP relaxation (greedy with the hull transform).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    IlpExact,
    LpConservative,
}

/// Recipe for constructing the reference null distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NullSpec {
    Exact { budget: u128 },
    MonteCarlo { reps: u64, seed: u64 },
}

impl NullSpec {
    pub fn build(
        &self,
        dataset: &StratifiedDataset,
        spec: &RankScoreSpec,
    ) -> Result<NullDistribution> {
        match *self {
            NullSpec::Exact { budget } => exact_null_with_budget(dataset, spec, budget),
            NullSpec::MonteCarlo { reps, seed } => mc_null(dataset, spec, reps, seed),
        }
    }
}

fn single_objective(table: &MinStatTable, k: usize, method: Method) -> Result<f64> {
    match method {
        Method::IlpExact => Ok(solve_dp_ilp(table, k)?.result.objective),
        Method::LpConservative => Ok(solve_greedy_lp(table, k)?.objective),
    }
}

/// Minimized statistics valid on capacities `cap_lo..=cap_hi`, forced
/// nonincreasing over that window to keep downstream monotone searches
/// stable against float jitter. Capping the window keeps probes over high
/// ranks cheap: the DP works at most to `cap_hi` and the greedy can skip
/// its small-capacity truncation fixups below `cap_lo`.
fn objectives_window(
    table: &MinStatTable,
    cap_lo: usize,
    cap_hi: usize,
    method: Method,
) -> Vec<f64> {
    let mut objs = match method {
        Method::IlpExact => dp_objectives(table, cap_hi),
        Method::LpConservative => greedy_objectives_window(table, cap_lo, cap_hi),
    };
    for d in cap_lo + 1..objs.len() {
        if objs[d] > objs[d - 1] {
            objs[d] = objs[d - 1];
        }
    }
    objs
}

/// Minimized statistics for every capacity 0..=max_capacity.
fn objectives_by_capacity(table: &MinStatTable, max_capacity: usize, method: Method) -> Vec<f64> {
    objectives_window(table, 0, max_capacity, method)
}

/// The valid p-value for the null "k-th smallest effect <= c".
///
/// `k = 0` is vacuous and yields 1. Under `LpConservative` the returned
/// value dominates the exact one, so it remains valid.
pub fn test_quantile(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    k: usize,
    c: f64,
    tail: &dyn TailFunction,
    method: Method,
) -> Result<f64> {
    let n = dataset.total_units();
    if k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if k == 0 {
        return Ok(1.0);
    }
    let table = build_min_table(dataset, spec, policy, c)?;
    let objective = single_objective(&table, k, method)?;
    Ok(tail.tail(objective))
}

/// Deterministic bounds on the ordering-dependent p-value: the lower bound
/// ranks tied controls below treated units, the upper bound the reverse.
/// The upper bound is itself a valid p-value no matter the unit order.
pub fn test_quantile_bounds(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    k: usize,
    c: f64,
    tail: &dyn TailFunction,
    method: Method,
) -> Result<(f64, f64)> {
    let lower = test_quantile(dataset, spec, TiePolicy::ControlsFirst, k, c, tail, method)?;
    let upper = test_quantile(dataset, spec, TiePolicy::TreatedFirst, k, c, tail, method)?;
    Ok((lower, upper))
}

/// Lower confidence limit for one effect quantile, with boundary membership
/// under each tie handling. The limit value itself is shared: the three
/// confidence sets can differ only in whether the boundary point belongs.
#[derive(Debug, Clone, Serialize)]
pub struct QuantileLimit {
    pub k: usize,
    /// Lower confidence limit; -inf means the interval is the whole line.
    pub lower: f64,
    /// Boundary membership under the order-free upper-bound p-value (the
    /// reported default).
    pub included_upper_p: bool,
    /// Boundary membership under the caller's (seeded) tie policy.
    pub included_seeded: bool,
    /// Boundary membership under the lower-bound p-value.
    pub included_lower_p: bool,
}

/// Lower confidence limit for the number of units with effects above c.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdCount {
    pub c: f64,
    /// Smallest member of the confidence set for n(c); the set is
    /// {lower, lower+1, .., n_units}.
    pub lower: usize,
}

/// Simultaneously valid confidence limits across every requested quantile
/// and threshold: no multiplicity adjustment is needed.
#[derive(Debug, Clone, Serialize)]
pub struct QuantileReport {
    pub alpha: f64,
    pub method: Method,
    pub seeded_policy: TiePolicy,
    pub n_units: usize,
    pub limits: Vec<QuantileLimit>,
    pub threshold_counts: Vec<ThresholdCount>,
    /// Sensitivity parameter when the report comes from a sensitivity run.
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    /// Threshold to evaluate the p-value at.
    eval_at: f64,
    /// Lower limit implied when this probe is the first with p > alpha.
    limit: f64,
    /// Whether that limit is attained (the probe sits on a candidate).
    boundary: bool,
}

/// Candidate thresholds: the within-stratum treated-minus-control outcome
/// differences are the only c values where any rank configuration of the
/// imputed outcomes can change.
pub fn candidate_thresholds(dataset: &StratifiedDataset) -> Vec<f64> {
    let mut out = Vec::new();
    for stratum in dataset.strata() {
        for (&zi, &yi) in stratum.assignments().iter().zip(stratum.outcomes()) {
            if !zi {
                continue;
            }
            for (&zj, &yj) in stratum.assignments().iter().zip(stratum.outcomes()) {
                if !zj {
                    out.push(yi - yj);
                }
            }
        }
    }
    out.sort_unstable_by(f64::total_cmp);
    out.dedup_by(|a, b| a.total_cmp(b).is_eq());
    out
}

fn probes_from_candidates(candidates: &[f64]) -> Vec<Probe> {
    if candidates.is_empty() {
        return vec![Probe {
            eval_at: 0.0,
            limit: f64::NEG_INFINITY,
            boundary: false,
        }];
    }
    let mut probes = Vec::with_capacity(2 * candidates.len() + 1);
    let first = candidates[0];
    probes.push(Probe {
        eval_at: (first - 1.0).min(first.next_down()),
        limit: f64::NEG_INFINITY,
        boundary: false,
    });
    for (i, &c) in candidates.iter().enumerate() {
        probes.push(Probe {
            eval_at: c,
            limit: c,
            boundary: true,
        });
        if let Some(&next) = candidates.get(i + 1) {
            let mid = c + (next - c) / 2.0;
            if mid > c && mid < next {
                probes.push(Probe {
                    eval_at: mid,
                    limit: c,
                    boundary: false,
                });
            }
        }
    }
    let last = *candidates.last().unwrap();
    probes.push(Probe {
        eval_at: (last + 1.0).max(last.next_up()),
        limit: last,
        boundary: false,
    });
    probes
}

/// Largest k within [k_lo, k_hi] whose p-value under `table`'s threshold
/// exceeds alpha, or k_lo - 1 if even k_lo rejects. One sweep prices every
/// rank in the window at once.
fn kbar_bounded(
    table: &MinStatTable,
    alpha: f64,
    tail: &dyn TailFunction,
    method: Method,
    k_lo: usize,
    k_hi: usize,
) -> usize {
    debug_assert!(1 <= k_lo && k_lo <= k_hi);
    let n = table.total_units();
    let objs = objectives_window(table, n - k_hi, n - k_lo, method);
    let p_of = |k: usize| tail.tail(objs[n - k]);
    if p_of(k_lo) <= alpha {
        return k_lo - 1;
    }
    // p is nonincreasing in k; find the last covered k in the window.
    let mut lo = k_lo;
    let mut hi = k_hi + 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if p_of(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Options for [`invert_confidence`].
#[derive(Debug, Clone, Default)]
pub struct InversionOptions {
    /// Quantile ranks to report; `None` means every k in 1..=N.
    pub ks: Option<Vec<usize>>,
    /// Thresholds c at which to report lower confidence limits for n(c).
    pub thresholds: Vec<f64>,
}

/// Inverts the family of quantile tests into lower confidence limits for
/// every requested quantile, plus confidence sets for the effect counts
/// n(c) at requested thresholds. Simultaneously valid at level 1-alpha.
///
/// The search runs under the order-free upper-bound p-value; the seeded and
/// lower-bound p-values share each limit value and are annotated with their
/// own boundary membership.
pub fn invert_confidence(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    alpha: f64,
    tail: &dyn TailFunction,
    method: Method,
    options: &InversionOptions,
) -> Result<QuantileReport> {
    invert_confidence_tagged(dataset, spec, policy, alpha, tail, method, options, None)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn invert_confidence_tagged(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    alpha: f64,
    tail: &dyn TailFunction,
    method: Method,
    options: &InversionOptions,
    gamma: Option<f64>,
) -> Result<QuantileReport> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let n = dataset.total_units();
    let ks: Vec<usize> = match &options.ks {
        Some(ks) => {
            let mut ks = ks.clone();
            ks.sort_unstable();
            ks.dedup();
            if ks.iter().any(|&k| k == 0 || k > n) {
                return Err(Error::InvalidArgument(
                    "requested quantile ranks must lie in 1..=N".to_string(),
                ));
            }
            ks
        }
        None => (1..=n).collect(),
    };

    let search_policy = TiePolicy::TreatedFirst;
    let candidates = candidate_thresholds(dataset);
    let probes = probes_from_candidates(&candidates);
    let search_family = MinTableFamily::build(dataset, spec, search_policy)?;

    // Monotone divide and conquer: each node pins the first probe with
    // p > alpha for a contiguous run of ks; probe evaluations at one level
    // are independent and run in parallel.
    #[derive(Clone, Copy)]
    struct Node {
        plo: usize,
        phi: usize,
        klo: usize,
        khi: usize,
    }
    let mut answers = vec![usize::MAX; ks.len()];
    let mut level = vec![Node {
        plo: 0,
        phi: probes.len() - 1,
        klo: 0,
        khi: ks.len() - 1,
    }];
    if ks.is_empty() {
        level.clear();
    }
    while !level.is_empty() {
        let mut next = Vec::new();
        let mut pending = Vec::new();
        for node in level {
            if node.plo == node.phi {
                for slot in &mut answers[node.klo..=node.khi] {
                    *slot = node.plo;
                }
            } else {
                pending.push(node);
            }
        }
        let evals: Vec<usize> = pending
            .par_iter()
            .map(|node| {
                let pm = node.plo + (node.phi - node.plo) / 2;
                let table = search_family.at(probes[pm].eval_at);
                kbar_bounded(&table, alpha, tail, method, ks[node.klo], ks[node.khi])
            })
            .collect();
        for (node, kb) in pending.into_iter().zip(evals) {
            let pm = node.plo + (node.phi - node.plo) / 2;
            // ks are sorted ascending: those <= kb resolve at or before pm.
            let split = ks[node.klo..=node.khi].partition_point(|&k| k <= kb) + node.klo;
            if split > node.klo {
                next.push(Node {
                    plo: node.plo,
                    phi: pm,
                    klo: node.klo,
                    khi: split - 1,
                });
            }
            if split <= node.khi {
                next.push(Node {
                    plo: pm + 1,
                    phi: node.phi,
                    klo: split,
                    khi: node.khi,
                });
            }
        }
        level = next;
    }

    // Boundary membership under the seeded and lower-bound p-values at each
    // distinct finite limit (the limit values coincide across tie
    // handlings; only boundary membership may differ). Ranks sharing a
    // limit are contiguous since limits are nondecreasing in k, so each
    // probe restricts itself to that window. When even the upper-bound
    // p-value rejects at the limit (boundary excluded), the dominated
    // p-values reject too and no probe is needed.
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (idx, &a) in answers.iter().enumerate() {
        let limit = probes[a].limit;
        if !limit.is_finite() || !probes[a].boundary {
            continue;
        }
        match groups.last_mut() {
            Some((value, _, last)) if value.total_cmp(&limit).is_eq() => *last = idx,
            _ => groups.push((limit, idx, idx)),
        }
    }
    let seeded_family = MinTableFamily::build(dataset, spec, policy)?;
    let lower_family = MinTableFamily::build(dataset, spec, TiePolicy::ControlsFirst)?;
    let flag_kbars: Vec<[usize; 2]> = groups
        .par_iter()
        .map(|&(c, first, last)| {
            [&seeded_family, &lower_family].map(|family| {
                let table = family.at(c);
                kbar_bounded(&table, alpha, tail, method, ks[first], ks[last])
            })
        })
        .collect();

    let mut limits: Vec<QuantileLimit> = ks
        .iter()
        .zip(&answers)
        .map(|(&k, &a)| {
            let probe = probes[a];
            QuantileLimit {
                k,
                lower: probe.limit,
                included_upper_p: probe.limit.is_finite() && probe.boundary,
                included_seeded: false,
                included_lower_p: false,
            }
        })
        .collect();
    for ((_, first, last), kbars) in groups.iter().zip(&flag_kbars) {
        for limit in &mut limits[*first..=*last] {
            limit.included_seeded = limit.k <= kbars[0];
            limit.included_lower_p = limit.k <= kbars[1];
        }
    }

    let threshold_counts: Vec<ThresholdCount> = options
        .thresholds
        .par_iter()
        .map(|&c| {
            let table = search_family.at(c);
            let kb = kbar_bounded(&table, alpha, tail, method, 1, n);
            ThresholdCount { c, lower: n - kb }
        })
        .collect();

    Ok(QuantileReport {
        alpha,
        method,
        seeded_policy: policy,
        n_units: n,
        limits,
        threshold_counts,
        gamma,
    })
}

/// Outcome of the Bonferroni two-sided test at one (k, c).
#[derive(Debug, Clone, Serialize)]
pub struct TwoSidedOutcome {
    pub k: usize,
    pub c: f64,
    pub alpha: f64,
    pub p_right: f64,
    pub p_left: f64,
    pub reject: bool,
}

/// Two-sided test combining the right-favoring test on the data with the
/// left-favoring test on the label-switched data (which negates every
/// individual effect), rejecting when either one-sided p-value is at most
/// alpha/2.
pub fn two_sided_test(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    k: usize,
    c: f64,
    alpha: f64,
    null: &NullSpec,
    method: Method,
) -> Result<TwoSidedOutcome> {
    let n = dataset.total_units();
    if k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let right_null = null.build(dataset, spec)?;
    let p_right = test_quantile(dataset, spec, policy, k, c, &right_null, method)?;

    // Flip labels but keep outcomes: the transformed experiment carries the
    // negated effects, so the right-favoring machinery tests the left side.
    let flipped = negate_effects(dataset)?;
    let left_null = null.build(&flipped, spec)?;
    let k_left = if k == 0 { 0 } else { n + 1 - k };
    let p_left = test_quantile(&flipped, spec, policy, k_left, -c, &left_null, method)?;

    Ok(TwoSidedOutcome {
        k,
        c,
        alpha,
        p_right,
        p_left,
        reject: p_right.min(p_left) <= alpha / 2.0,
    })
}

/// Detail row for batch two-sided testing: the decision plus Monte Carlo
/// standard errors when the nulls are simulated.
#[derive(Debug, Clone, Serialize)]
pub struct TwoSidedDetail {
    #[serde(flatten)]
    pub outcome: TwoSidedOutcome,
    pub p_right_se: Option<f64>,
    pub p_left_se: Option<f64>,
}

/// Runs the Bonferroni two-sided test over a grid of ranks and thresholds,
/// building each null distribution once and pricing every rank from a
/// single minimized-table sweep per threshold.
#[allow(clippy::too_many_arguments)]
pub fn two_sided_batch(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    ks: &[usize],
    cs: &[f64],
    alpha: f64,
    null: &NullSpec,
    method: Method,
) -> Result<Vec<TwoSidedDetail>> {
    let n = dataset.total_units();
    if let Some(&bad) = ks.iter().find(|&&k| k > n) {
        return Err(Error::KOutOfRange { k: bad, n });
    }
    let right_null = null.build(dataset, spec)?;
    let flipped = negate_effects(dataset)?;
    let left_null = null.build(&flipped, spec)?;

    let mut rows = Vec::with_capacity(ks.len() * cs.len());
    for &c in cs {
        let right_table = build_min_table(dataset, spec, policy, c)?;
        let right_objs = objectives_by_capacity(&right_table, n, method);
        let left_table = build_min_table(&flipped, spec, policy, -c)?;
        let left_objs = objectives_by_capacity(&left_table, n, method);
        for &k in ks {
            let (p_right, p_right_se, p_left, p_left_se) = if k == 0 {
                (1.0, None, 1.0, None)
            } else {
                let (pr, pr_se) =
                    crate::nulldist::pvalue_with_se(&right_null, right_objs[n - k]);
                // The left test targets rank N+1-k of the negated effects,
                // i.e. capacity k-1.
                let (pl, pl_se) = crate::nulldist::pvalue_with_se(&left_null, left_objs[k - 1]);
                (pr, pr_se, pl, pl_se)
            };
            rows.push(TwoSidedDetail {
                outcome: TwoSidedOutcome {
                    k,
                    c,
                    alpha,
                    p_right,
                    p_left,
                    reject: p_right.min(p_left) <= alpha / 2.0,
                },
                p_right_se,
                p_left_se,
            });
        }
    }
    Ok(rows)
}

/// Treatment-label switch without the sign change: effects are negated.
fn negate_effects(dataset: &StratifiedDataset) -> Result<StratifiedDataset> {
    let mask = vec![true; dataset.num_strata()];
    let switched = switch_labels_masked(dataset, &mask)?;
    // switch_labels negates outcomes as well; undo the sign change.
    let strata = switched
        .strata()
        .iter()
        .map(|s| {
            crate::data::Stratum::new(
                s.assignments().to_vec(),
                s.outcomes().iter().map(|&y| -y).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StratifiedDataset::new(strata, dataset.design()))
}
