//! Solvers for the per-threshold allocation problem: minimize the sum of
//! per-stratum minimized statistics subject to the allocations summing to
//! N-k. Equivalently, maximize the total of per-stratum increment prefix
//! sums at a fixed total capacity — a multiple-choice knapsack whose weights
//! are the consecutive integers 0..=n_s.
//!
//! Three routes: exact dynamic programming, a greedy pass over
//! hull-transformed increments (provably the LP-relaxation optimum, hence a
//! conservative bound), and brute-force enumeration as an oracle. A naive
//! stagewise greedy is kept only as a documented counterexample baseline; it
//! can undershoot the true optimum and must not back a p-value.

use serde::{Deserialize, Serialize};

use crate::minstat::MinStatTable;
use crate::{Error, Result};

/// Default cap on brute-force enumeration (feasible allocation products).
pub const DEFAULT_BRUTE_FORCE_BUDGET: u128 = 10_000_000;

/// Comparison tolerance for objective ties.
pub const OBJECTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    DpIlp,
    GreedyLp,
    BruteForce,
    NaiveGreedy,
}

/// Outcome of one solve: the minimized statistic and a feasible allocation
/// (l_1..l_S summing to N-k). The DP and brute-force allocations are
/// integral; the greedy records the equivalent LP-relaxation allocation,
/// reported for diagnostics only.
#[derive(Debug, Clone, Serialize)]
pub struct OptResult {
    pub objective: f64,
    pub allocation: Vec<f64>,
    pub method: SolveMethod,
}

/// Exact DP solve plus the intermediate optima: `objective_at_capacity[d]`
/// is the minimized statistic when at most `d` units may exceed the
/// threshold, for every `d` up to N-k. A single k=0 run therefore prices
/// every hypothesis at this threshold at once.
#[derive(Debug, Clone)]
pub struct DpSolution {
    pub result: OptResult,
    pub objective_at_capacity: Vec<f64>,
}

/// The optimal monotone dominating transformation: the output is
/// nonincreasing, its prefix sums dominate the input's, and they are minimal
/// among all such transformations — they trace the upper convex hull of the
/// input's cumulative-sum polyline.
pub fn hull_transform(a: &[f64]) -> Vec<f64> {
    let m = a.len();
    if m == 0 {
        return Vec::new();
    }
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for &v in a {
        acc += v;
        cum.push(acc);
    }
    let hull = upper_hull_vertices(&cum);
    // Evaluate the hull at integer abscissae and difference.
    let mut out = Vec::with_capacity(m);
    let mut seg = 0;
    let mut prev = 0.0;
    for x in 1..=m {
        while hull[seg + 1] < x {
            seg += 1;
        }
        let h = eval_segment(&cum, hull[seg], hull[seg + 1], x);
        out.push(h - prev);
        prev = h;
    }
    out
}

/// Indices of the upper-hull vertices of the polyline (x, cum[x]).
fn upper_hull_vertices(cum: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(cum.len());
    for x in 0..cum.len() {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let p = hull[hull.len() - 1];
            let cross = (p - o) as f64 * (cum[x] - cum[o]) - (cum[p] - cum[o]) * (x - o) as f64;
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(x);
    }
    hull
}

fn eval_segment(cum: &[f64], x0: usize, x1: usize, x: usize) -> f64 {
    if x == x1 {
        cum[x1]
    } else if x == x0 {
        cum[x0]
    } else {
        cum[x0] + (cum[x1] - cum[x0]) * ((x - x0) as f64) / ((x1 - x0) as f64)
    }
}

fn check_k(table: &MinStatTable, k: usize) -> Result<usize> {
    let n = table.total_units();
    if k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(n - k)
}

/// Greedy over hull-transformed increments, truncated per stratum at
/// min(n_s, N-k): pools every transformed element and keeps the largest
/// N-k. This equals the LP-relaxation optimum, so its objective never
/// exceeds the exact one and the induced p-value stays valid.
pub fn solve_greedy_lp(table: &MinStatTable, k: usize) -> Result<OptResult> {
    let capacity = check_k(table, k)?;
    let mut pool: Vec<(f64, u32)> = Vec::with_capacity(table.total_units());
    for (s, stratum) in table.strata().iter().enumerate() {
        let cap = stratum.deltas.len().min(capacity);
        for value in hull_transform(&stratum.deltas[..cap]) {
            pool.push((value, s as u32));
        }
    }
    pool.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut allocation = vec![0.0; table.num_strata()];
    let mut taken = 0.0;
    for &(value, s) in pool.iter().take(capacity) {
        taken += value;
        allocation[s as usize] += 1.0;
    }
    Ok(OptResult {
        objective: table.total_at_zero() - taken,
        allocation,
        method: SolveMethod::GreedyLp,
    })
}

/// Stagewise locally-optimal picks without the hull transformation. Known to
/// undershoot the maximum when increments are nonmonotone; retained as a
/// baseline, never as a p-value basis.
pub fn solve_naive_greedy(table: &MinStatTable, k: usize) -> Result<OptResult> {
    let capacity = check_k(table, k)?;
    let mut next = vec![0usize; table.num_strata()];
    let mut taken = 0.0;
    for _ in 0..capacity {
        let mut best: Option<(f64, usize)> = None;
        for (s, stratum) in table.strata().iter().enumerate() {
            if next[s] < stratum.deltas.len() {
                let value = stratum.deltas[next[s]];
                if best.map_or(true, |(bv, _)| value > bv) {
                    best = Some((value, s));
                }
            }
        }
        let (value, s) = best.expect("capacity <= N guarantees room");
        taken += value;
        next[s] += 1;
    }
    Ok(OptResult {
        objective: table.total_at_zero() - taken,
        allocation: next.iter().map(|&l| l as f64).collect(),
        method: SolveMethod::NaiveGreedy,
    })
}

/// Per-stratum prefix sums of increments: P[i] = deltas[0] + .. + deltas[i-1].
fn prefix_sums(deltas: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for &d in deltas {
        acc += d;
        out.push(acc);
    }
    out
}

/// Relaxes `next` with one stratum's choices: next[d] gets
/// max_i row[d-i] + prefixes[i]. Written as shifted slice sweeps so the
/// inner loop vectorizes.
fn relax_row(row: &[f64], next: &mut [f64], prefixes: &[f64], max_capacity: usize) {
    for (i, &p) in prefixes.iter().enumerate().skip(1) {
        if i > max_capacity {
            break;
        }
        let src = &row[..=max_capacity - i];
        let dst = &mut next[i..=max_capacity];
        for (s, d) in src.iter().zip(dst) {
            let candidate = s + p;
            if candidate > *d {
                *d = candidate;
            }
        }
    }
}

/// One forward DP pass, equality-constrained: returns the row of maxima
/// m(d) = max { sum of prefix sums : allocations summing to exactly d } for
/// d = 0..=max_capacity, using O(max_capacity) memory.
fn dp_row(table: &MinStatTable, max_capacity: usize) -> Vec<f64> {
    let mut row = vec![f64::NEG_INFINITY; max_capacity + 1];
    row[0] = 0.0;
    let mut next = vec![f64::NEG_INFINITY; max_capacity + 1];
    for stratum in table.strata() {
        let prefixes = prefix_sums(&stratum.deltas);
        next.copy_from_slice(&row);
        relax_row(&row, &mut next, &prefixes, max_capacity);
        std::mem::swap(&mut row, &mut next);
    }
    row
}

/// Exact solution of the integer program by dynamic programming, plus the
/// optimum for every smaller capacity. Objective ties in the allocation are
/// broken toward the lexicographically smallest (l_1, .., l_S).
pub fn solve_dp_ilp(table: &MinStatTable, k: usize) -> Result<DpSolution> {
    let capacity = check_k(table, k)?;
    let num_strata = table.num_strata();
    // Suffix optima: rows[b][d] = best over strata b.. with total exactly d.
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); num_strata + 1];
    let mut base = vec![f64::NEG_INFINITY; capacity + 1];
    base[0] = 0.0;
    rows[num_strata] = base;
    for b in (0..num_strata).rev() {
        let prefixes = prefix_sums(&table.strata()[b].deltas);
        let below = &rows[b + 1];
        let mut row = below.clone();
        relax_row(below, &mut row, &prefixes, capacity);
        rows[b] = row;
    }

    // Forward reconstruction, smallest feasible choice first.
    let mut allocation = vec![0.0; num_strata];
    let mut remaining = capacity;
    for (b, stratum) in table.strata().iter().enumerate() {
        let prefixes = prefix_sums(&stratum.deltas);
        let target = rows[b][remaining];
        let limit = stratum.deltas.len().min(remaining);
        let mut chosen = None;
        for i in 0..=limit {
            if prefixes[i] + rows[b + 1][remaining - i] >= target - OBJECTIVE_TOL {
                chosen = Some(i);
                break;
            }
        }
        let i = chosen.expect("DP row admits at least one consistent choice");
        allocation[b] = i as f64;
        remaining -= i;
    }
    debug_assert_eq!(remaining, 0);

    let total = table.total_at_zero();
    let objective_at_capacity: Vec<f64> = rows[0][..=capacity]
        .iter()
        .map(|&m| total - m)
        .collect();
    Ok(DpSolution {
        result: OptResult {
            objective: objective_at_capacity[capacity],
            allocation,
            method: SolveMethod::DpIlp,
        },
        objective_at_capacity,
    })
}

/// Rolling-row DP giving only the minimized objectives for every capacity
/// d = 0..=max_capacity; this is the memory-lean path the confidence-set
/// inverter uses (a k=0 sweep prices all hypotheses at once).
pub fn dp_objectives(table: &MinStatTable, max_capacity: usize) -> Vec<f64> {
    let total = table.total_at_zero();
    dp_row(table, max_capacity)
        .into_iter()
        .map(|m| total - m)
        .collect()
}

/// Greedy (LP) objectives for every capacity d = 0..=max_capacity. For
/// capacities at or above the largest stratum size the per-stratum
/// truncation never binds and one pooled sort serves them all; smaller
/// capacities are re-solved individually.
pub fn greedy_objectives(table: &MinStatTable, max_capacity: usize) -> Vec<f64> {
    greedy_objectives_window(table, 0, max_capacity)
}

/// Greedy objectives valid on capacities `cap_lo..=cap_hi` (entries below
/// `cap_lo` are filled but skip the small-capacity truncation fixups). Only
/// the largest `cap_hi` pooled elements are needed, so the pool is
/// partially selected rather than fully sorted.
pub fn greedy_objectives_window(
    table: &MinStatTable,
    cap_lo: usize,
    cap_hi: usize,
) -> Vec<f64> {
    let total = table.total_at_zero();
    let n_total = table.total_units();
    let max_stratum = table
        .strata()
        .iter()
        .map(|s| s.deltas.len())
        .max()
        .unwrap_or(0);
    let mut pool: Vec<f64> = Vec::with_capacity(n_total);
    for stratum in table.strata() {
        pool.extend(hull_transform(&stratum.deltas));
    }
    if cap_hi > 0 && cap_hi < pool.len() {
        pool.select_nth_unstable_by(cap_hi - 1, |a, b| b.total_cmp(a));
        pool.truncate(cap_hi);
    }
    pool.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut out = Vec::with_capacity(cap_hi + 1);
    let mut acc = 0.0;
    for d in 0..=cap_hi {
        if d > 0 {
            acc += pool[d - 1];
        }
        out.push(total - acc);
    }
    for d in cap_lo.max(1)..max_stratum.min(cap_hi + 1) {
        let k = n_total - d;
        let solved = solve_greedy_lp(table, k).expect("capacity within range");
        out[d] = solved.objective;
    }
    out
}

/// Exhaustive enumeration of feasible integer allocations; the test oracle.
pub fn solve_brute_force(table: &MinStatTable, k: usize) -> Result<OptResult> {
    solve_brute_force_with_budget(table, k, DEFAULT_BRUTE_FORCE_BUDGET)
}

pub fn solve_brute_force_with_budget(
    table: &MinStatTable,
    k: usize,
    budget: u128,
) -> Result<OptResult> {
    let capacity = check_k(table, k)?;
    let mut combos: u128 = 1;
    for stratum in table.strata() {
        combos = combos.saturating_mul(stratum.t.len() as u128);
        if combos > budget {
            return Err(Error::BudgetExceeded {
                required: combos,
                budget,
            });
        }
    }

    let sizes: Vec<usize> = table.strata().iter().map(|s| s.deltas.len()).collect();
    let mut suffix_room = vec![0usize; sizes.len() + 1];
    for s in (0..sizes.len()).rev() {
        suffix_room[s] = suffix_room[s + 1] + sizes[s];
    }

    let mut best = f64::INFINITY;
    let mut best_alloc: Vec<usize> = Vec::new();
    let mut current = vec![0usize; sizes.len()];

    fn recurse(
        table: &MinStatTable,
        sizes: &[usize],
        suffix_room: &[usize],
        s: usize,
        remaining: usize,
        partial: f64,
        current: &mut Vec<usize>,
        best: &mut f64,
        best_alloc: &mut Vec<usize>,
    ) {
        if s == sizes.len() {
            if remaining == 0 && partial < *best - OBJECTIVE_TOL {
                *best = partial;
                *best_alloc = current.clone();
            }
            return;
        }
        let hi = sizes[s].min(remaining);
        let lo = remaining.saturating_sub(suffix_room[s + 1]);
        for l in lo..=hi {
            current[s] = l;
            recurse(
                table,
                sizes,
                suffix_room,
                s + 1,
                remaining - l,
                partial + table.strata()[s].t[l],
                current,
                best,
                best_alloc,
            );
        }
        current[s] = 0;
    }

    recurse(
        table,
        &sizes,
        &suffix_room,
        0,
        capacity,
        0.0,
        &mut current,
        &mut best,
        &mut best_alloc,
    );

    Ok(OptResult {
        objective: best,
        allocation: best_alloc.iter().map(|&l| l as f64).collect(),
        method: SolveMethod::BruteForce,
    })
}
