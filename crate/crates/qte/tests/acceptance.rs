//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `cargo test --test acceptance -- --nocapture` to see them all).
//!
//! Criterion 2 pins an upstream reference table of two-decimal p-values that
//! is internally inconsistent (the same tail value at the same argument is
//! printed differently across rows), so that test documents the mismatch and
//! fails by design; `criterion_02_pvalues_exact_enumeration` pins the
//! corrected values computed by exact enumeration and passes.

use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use qte::data::{permute_units, Design, StratifiedDataset, Stratum};
use qte::inference::{
    candidate_thresholds, invert_confidence, test_quantile, test_quantile_bounds,
    InversionOptions, Method,
};
use qte::knapsack::{
    hull_transform, solve_brute_force, solve_dp_ilp, solve_greedy_lp, solve_naive_greedy,
    OBJECTIVE_TOL,
};
use qte::minstat::build_min_table;
use qte::nulldist::{exact_null, mc_null, NullDistribution, TailFunction};
use qte::scores::{stratified_statistic, RankScoreSpec, TiePolicy};
use qte::sensitivity::{
    finite_sample_bound, finite_sample_pvalue, gamma_cutoff, gaussian_tail_pvalue,
    worst_case_moments, GammaCutoff, SensitivityTail,
};

fn pass(n: u32, message: &str) {
    println!("acceptance criterion {n}: PASS - {message}");
}

/// The three-strata worked example: Stephenson h=4 increments at threshold 0
/// are (3,7,4), (1,4,10), (6,1,4).
fn golden_dataset() -> StratifiedDataset {
    let strata = vec![
        Stratum::new(
            vec![true, true, true, false, false, false],
            vec![2.9, 2.3, 1.1, -0.5, 1.0, 1.9],
        )
        .unwrap(),
        Stratum::new(
            vec![true, true, true, false, false, false],
            vec![1.4, 2.4, 2.1, 0.3, -0.8, 0.1],
        )
        .unwrap(),
        Stratum::new(
            vec![true, true, true, false, false, false],
            vec![3.3, 0.5, 1.8, -0.1, -0.8, 2.0],
        )
        .unwrap(),
    ];
    StratifiedDataset::new(strata, Design::Scre)
}

fn random_stratum(rng: &mut StdRng, max_n: usize, tie_grid: Option<i32>) -> Stratum {
    let n = rng.gen_range(1..=max_n);
    let m = rng.gen_range(0..=n);
    let mut z = vec![false; n];
    for slot in z.iter_mut().take(m) {
        *slot = true;
    }
    let y: Vec<f64> = (0..n)
        .map(|_| match tie_grid {
            Some(grid) => rng.gen_range(-grid..=grid) as f64 / 2.0,
            None => rng.gen_range(-10.0..10.0),
        })
        .collect();
    Stratum::new(z, y).unwrap()
}

fn random_instance(rng: &mut StdRng, max_s: usize, max_n: usize) -> StratifiedDataset {
    let s = rng.gen_range(1..=max_s);
    let strata = (0..s)
        .map(|_| random_stratum(rng, max_n, None))
        .collect();
    StratifiedDataset::new(strata, Design::Scre)
}

fn random_spec(rng: &mut StdRng, max_rank: usize) -> RankScoreSpec {
    match rng.gen_range(0..3) {
        0 => RankScoreSpec::wilcoxon(),
        1 => RankScoreSpec::stephenson(rng.gen_range(2..=4)).unwrap(),
        _ => {
            // Random nondecreasing score table, coarse enough to have ties.
            let mut scores: Vec<f64> = (0..max_rank.max(1))
                .map(|_| rng.gen_range(0..=12) as f64 / 2.0)
                .collect();
            scores.sort_by(f64::total_cmp);
            RankScoreSpec::custom(scores).unwrap()
        }
    }
}

#[test]
fn criterion_01_golden_objectives() {
    let started = Instant::now();
    let ds = golden_dataset();
    let spec = RankScoreSpec::stephenson(4).unwrap();
    let table = build_min_table(&ds, &spec, TiePolicy::FirstByUnitOrder, 0.0).unwrap();
    let total = table.total_at_zero();
    assert!((total - 40.0).abs() < 1e-9);

    let ilp = [6.0, 10.0, 16.0, 21.0, 25.0, 31.0, 35.0, 36.0, 40.0];
    let lp = [6.0, 11.0, 16.0, 21.0, 26.0, 31.0, 35.0, 37.5, 40.0];
    let naive = [6.0, 9.0, 16.0, 20.0, 21.0, 25.0, 35.0, 36.0, 40.0];
    for d in 1..=9usize {
        let k = 18 - d;
        let got_ilp = total - solve_dp_ilp(&table, k).unwrap().result.objective;
        let got_lp = total - solve_greedy_lp(&table, k).unwrap().objective;
        let got_naive = total - solve_naive_greedy(&table, k).unwrap().objective;
        assert!((got_ilp - ilp[d - 1]).abs() <= 1e-9, "ILP at capacity {d}");
        assert!((got_lp - lp[d - 1]).abs() <= 1e-9, "LP at capacity {d}");
        assert!(
            (got_naive - naive[d - 1]).abs() <= 1e-9,
            "naive greedy at capacity {d}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    pass(1, "golden increment maxima exact for all three solvers");
}

fn golden_pvalue_columns() -> ([f64; 9], [f64; 9], [f64; 9]) {
    let ds = golden_dataset();
    let spec = RankScoreSpec::stephenson(4).unwrap();
    let table = build_min_table(&ds, &spec, TiePolicy::FirstByUnitOrder, 0.0).unwrap();
    let null = exact_null(&ds, &spec).unwrap();
    let mut ilp = [0.0; 9];
    let mut lp = [0.0; 9];
    let mut naive = [0.0; 9];
    for d in 1..=9usize {
        let k = 18 - d;
        ilp[d - 1] = null.tail(solve_dp_ilp(&table, k).unwrap().result.objective);
        lp[d - 1] = null.tail(solve_greedy_lp(&table, k).unwrap().objective);
        naive[d - 1] = null.tail(solve_naive_greedy(&table, k).unwrap().objective);
    }
    (ilp, lp, naive)
}

fn round2(p: f64) -> f64 {
    (p * 100.0).round() / 100.0
}

/// Reference two-decimal values as printed upstream. The GT column is
/// omitted because it is identical to LP by construction (both are the LP
/// optimum).
const REF_ILP: [f64; 9] = [0.11, 0.21, 0.47, 0.69, 0.84, 0.95, 0.98, 0.99, 1.00];
const REF_LP: [f64; 9] = [0.11, 0.27, 0.47, 0.69, 0.85, 0.95, 0.98, 1.00, 1.00];
const REF_GREEDY: [f64; 9] = [0.11, 0.15, 0.47, 0.57, 0.63, 0.79, 0.98, 0.99, 1.00];

#[test]
fn criterion_02_pvalues_reference_table() {
    let started = Instant::now();
    let (ilp, lp, naive) = golden_pvalue_columns();
    let mut mismatches = Vec::new();
    for (name, got, reference) in [
        ("ILP", &ilp, &REF_ILP),
        ("LP/GT", &lp, &REF_LP),
        ("Greedy", &naive, &REF_GREEDY),
    ] {
        for d in 1..=9usize {
            let rounded = round2(got[d - 1]);
            if (rounded - reference[d - 1]).abs() > 1e-9 {
                mismatches.push(format!(
                    "{name} at capacity {d}: exact tail {:.6} rounds to {rounded:.2}, \
                     reference prints {:.2}",
                    got[d - 1],
                    reference[d - 1]
                ));
            }
        }
    }
    assert!(started.elapsed().as_secs_f64() < 5.0);
    if mismatches.is_empty() {
        pass(2, "p-values match the reference two-decimal table");
    } else {
        println!("acceptance criterion 2: FAIL - reference-table cells irreproducible:");
        for line in &mismatches {
            println!("  {line}");
        }
        println!(
            "  The exact enumeration (verified by two independent oracles; see the \
             companion test criterion_02_pvalues_exact_enumeration) contradicts these \
             cells, and the reference table is internally inconsistent: it prints the \
             same tail value at the same argument differently across rows."
        );
        panic!(
            "{} reference cells cannot be reproduced by any single tail function",
            mismatches.len()
        );
    }
}

#[test]
fn criterion_02_pvalues_exact_enumeration() {
    let started = Instant::now();
    let (ilp, lp, naive) = golden_pvalue_columns();
    // Exact tails of the 8000-assignment null, frozen from two independent
    // enumerations (rank-subset convolution and direct joint enumeration).
    let expected_ilp = [0.11, 0.21, 0.47, 0.69, 0.83, 0.95, 0.99, 0.99, 1.00];
    let expected_lp = [0.11, 0.27, 0.47, 0.69, 0.85, 0.95, 0.99, 1.00, 1.00];
    let expected_naive = [0.11, 0.17, 0.47, 0.63, 0.69, 0.83, 0.99, 0.99, 1.00];
    for d in 1..=9usize {
        assert_eq!(round2(ilp[d - 1]), expected_ilp[d - 1], "ILP at capacity {d}");
        assert_eq!(round2(lp[d - 1]), expected_lp[d - 1], "LP at capacity {d}");
        assert_eq!(
            round2(naive[d - 1]),
            expected_naive[d - 1],
            "naive greedy at capacity {d}"
        );
    }
    // Spot checks against the unrounded exact tails.
    assert!((ilp[1] - 0.20975).abs() < 1e-12);
    assert!((lp[1] - 0.269375).abs() < 1e-12);
    assert!((ilp[8] - 1.0).abs() < 1e-12);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    pass(2, "p-values match exact enumeration at every capacity (corrected table)");
}

#[test]
fn criterion_03_dp_equals_brute_force() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xACC3);
    let mut instances = 0;
    while instances < 200 {
        let ds = random_instance(&mut rng, 4, 5);
        let max_rank = ds.strata().iter().map(|s| s.len()).max().unwrap();
        let spec = random_spec(&mut rng, max_rank);
        let c = rng.gen_range(-2.0..2.0);
        let table = build_min_table(&ds, &spec, TiePolicy::FirstByUnitOrder, c).unwrap();
        for k in 0..=ds.total_units() {
            let dp = solve_dp_ilp(&table, k).unwrap().result.objective;
            let bf = solve_brute_force(&table, k).unwrap().objective;
            assert!(
                (dp - bf).abs() <= OBJECTIVE_TOL,
                "instance {instances}, k={k}: dp {dp} vs brute force {bf}"
            );
        }
        instances += 1;
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}");
    pass(3, "DP equals brute force on 200 random instances at every k");
}

#[test]
fn criterion_04_lp_sandwich_and_wilcoxon_exactness() {
    let mut rng = StdRng::seed_from_u64(0xACC4);
    for instance in 0..200 {
        let ds = random_instance(&mut rng, 4, 5);
        let max_rank = ds.strata().iter().map(|s| s.len()).max().unwrap();
        let spec = random_spec(&mut rng, max_rank);
        let c = rng.gen_range(-2.0..2.0);
        let table = build_min_table(&ds, &spec, TiePolicy::FirstByUnitOrder, c).unwrap();
        let wilcoxon_table =
            build_min_table(&ds, &RankScoreSpec::wilcoxon(), TiePolicy::FirstByUnitOrder, c)
                .unwrap();
        for k in 0..=ds.total_units() {
            let dp = solve_dp_ilp(&table, k).unwrap().result.objective;
            let lp = solve_greedy_lp(&table, k).unwrap().objective;
            assert!(
                lp <= dp + OBJECTIVE_TOL,
                "instance {instance}, k={k}: greedy {lp} above dp {dp}"
            );
            let dp_w = solve_dp_ilp(&wilcoxon_table, k).unwrap().result.objective;
            let lp_w = solve_greedy_lp(&wilcoxon_table, k).unwrap().objective;
            assert!(
                (dp_w - lp_w).abs() <= OBJECTIVE_TOL,
                "instance {instance}, k={k}: concave scores must make greedy exact"
            );
        }
    }
    pass(4, "greedy never exceeds DP; equals DP under concave scores");
}

#[test]
fn criterion_05_hull_transform_properties() {
    let mut rng = StdRng::seed_from_u64(0xACC5);
    for _ in 0..1000 {
        let m = rng.gen_range(1..=20);
        let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let t = hull_transform(&a);
        assert_eq!(t.len(), m);
        // Nonincreasing.
        for w in t.windows(2) {
            assert!(w[0] >= w[1] - 1e-9, "transform not nonincreasing: {t:?}");
        }
        // Prefix sums dominate the input's.
        let mut acc_a = 0.0;
        let mut acc_t = 0.0;
        for i in 0..m {
            acc_a += a[i];
            acc_t += t[i];
            assert!(acc_t >= acc_a - 1e-9);
        }
        // Prefix sums equal an independently computed upper hull of the
        // cumulative-sum polyline, evaluated at integer abscissae.
        let mut cum = vec![0.0];
        for &v in &a {
            cum.push(cum.last().unwrap() + v);
        }
        let mut prefix = 0.0;
        for x in 1..=m {
            prefix += t[x - 1];
            let mut best = cum[x];
            for i in 0..x {
                for j in x..=m {
                    if i == j {
                        continue;
                    }
                    let chord =
                        cum[i] + (cum[j] - cum[i]) * ((x - i) as f64) / ((j - i) as f64);
                    if chord > best {
                        best = chord;
                    }
                }
            }
            assert_eq!(
                prefix, best,
                "hull prefix at {x} differs from chord maximum (input {a:?})"
            );
        }
    }
    pass(5, "hull transform nonincreasing, dominating, and exactly the upper hull");
}

#[test]
fn criterion_06_exact_size_control() {
    let started = Instant::now();
    // 3 strata of 4 units, 2 treated each: 6^3 = 216 equally likely
    // assignments. True constant effect c, so the k=N null holds exactly.
    let mut rng = StdRng::seed_from_u64(0xACC6);
    let y0: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..4).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect();
    let c = 0.7;
    let alpha = 0.1;
    let spec = RankScoreSpec::stephenson(3).unwrap();

    // The null distribution depends only on the design and scores.
    let reference = StratifiedDataset::new(
        y0.iter()
            .map(|ys| Stratum::new(vec![true, true, false, false], ys.clone()).unwrap())
            .collect(),
        Design::Scre,
    );
    let null = exact_null(&reference, &spec).unwrap();

    let pairs: Vec<(usize, usize)> = (0..4)
        .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
        .collect();
    assert_eq!(pairs.len(), 6);
    let mut rejections = 0usize;
    let mut total = 0usize;
    for &(a1, b1) in &pairs {
        for &(a2, b2) in &pairs {
            for &(a3, b3) in &pairs {
                let picks = [(a1, b1), (a2, b2), (a3, b3)];
                let strata: Vec<Stratum> = (0..3)
                    .map(|s| {
                        let (a, b) = picks[s];
                        let z: Vec<bool> = (0..4).map(|i| i == a || i == b).collect();
                        let y: Vec<f64> = (0..4)
                            .map(|i| y0[s][i] + if z[i] { c } else { 0.0 })
                            .collect();
                        Stratum::new(z, y).unwrap()
                    })
                    .collect();
                let ds = StratifiedDataset::new(strata, Design::Scre);
                let p = test_quantile(
                    &ds,
                    &spec,
                    TiePolicy::FirstByUnitOrder,
                    12,
                    c,
                    &null,
                    Method::IlpExact,
                )
                .unwrap();
                if p <= alpha {
                    rejections += 1;
                }
                total += 1;
            }
        }
    }
    assert_eq!(total, 216);
    assert!(
        rejections as f64 / total as f64 <= alpha,
        "rejected {rejections}/216"
    );
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    pass(
        6,
        "exhaustive rejection frequency under the true null stays at or below alpha",
    );
}

#[test]
fn criterion_07_monotone_surface_and_ci_shape() {
    let mut rng = StdRng::seed_from_u64(0xACC7);
    for _ in 0..12 {
        let ds = random_instance(&mut rng, 3, 5);
        if ds.total_treated() == 0 {
            continue;
        }
        let max_rank = ds.strata().iter().map(|s| s.len()).max().unwrap();
        let spec = random_spec(&mut rng, max_rank);
        let null = exact_null(&ds, &spec).unwrap();
        let n = ds.total_units();
        let cs: Vec<f64> = (-4..=4).map(|i| i as f64 * 0.75).collect();
        for method in [Method::IlpExact, Method::LpConservative] {
            let mut by_k: Vec<Vec<f64>> = Vec::new();
            for &c in &cs {
                let ps: Vec<f64> = (0..=n)
                    .map(|k| {
                        test_quantile(
                            &ds,
                            &spec,
                            TiePolicy::FirstByUnitOrder,
                            k,
                            c,
                            &null,
                            method,
                        )
                        .unwrap()
                    })
                    .collect();
                // Nonincreasing in k at fixed c.
                for w in ps.windows(2) {
                    assert!(w[0] >= w[1] - 1e-12);
                }
                by_k.push(ps);
            }
            // Nondecreasing in c at fixed k.
            for k in 0..=n {
                for i in 1..cs.len() {
                    assert!(by_k[i][k] >= by_k[i - 1][k] - 1e-12);
                }
            }

            let report = invert_confidence(
                &ds,
                &spec,
                TiePolicy::FirstByUnitOrder,
                0.15,
                &null,
                method,
                &InversionOptions {
                    ks: None,
                    thresholds: vec![-0.5, 0.0, 0.5],
                },
            )
            .unwrap();
            for w in report.limits.windows(2) {
                assert!(w[0].lower <= w[1].lower, "limits must be nondecreasing in k");
            }
            // n(c) confidence sets have the contiguous top-interval shape
            // {lower, .., N} and match the interval-counting construction.
            for tc in &report.threshold_counts {
                assert!(tc.lower <= n);
                let by_intervals = report
                    .limits
                    .iter()
                    .filter(|limit| {
                        limit.lower.is_finite()
                            && if limit.included_upper_p {
                                tc.c < limit.lower
                            } else {
                                tc.c <= limit.lower
                            }
                    })
                    .count();
                assert_eq!(tc.lower, by_intervals);
            }
        }
    }
    pass(7, "p-surface monotone in k and c; limits monotone; n(c) sets top-intervals");
}

/// Per-policy inversion by direct scan over candidate thresholds and
/// midpoints; the independent oracle for criterion 8.
fn scan_lower_limit(
    ds: &StratifiedDataset,
    spec: &RankScoreSpec,
    policy: TiePolicy,
    k: usize,
    alpha: f64,
    null: &NullDistribution,
) -> f64 {
    let candidates = candidate_thresholds(ds);
    let p_at = |c: f64| {
        test_quantile(ds, spec, policy, k, c, null, Method::IlpExact).unwrap()
    };
    if candidates.is_empty() || p_at(candidates[0] - 1.0) > alpha {
        return f64::NEG_INFINITY;
    }
    for (i, &c) in candidates.iter().enumerate() {
        if p_at(c) > alpha {
            return c;
        }
        if let Some(&next) = candidates.get(i + 1) {
            if p_at(c + (next - c) / 2.0) > alpha {
                return c;
            }
        }
    }
    *candidates.last().unwrap()
}

#[test]
fn criterion_08_tie_policy_bracketing() {
    let mut rng = StdRng::seed_from_u64(0xACC8);
    // Tie-rich data: outcomes on a half-integer grid.
    let strata = vec![
        Stratum::new(
            vec![true, true, false, false, false],
            vec![1.0, 0.5, 1.0, 0.5, 0.0],
        )
        .unwrap(),
        Stratum::new(vec![true, false, false], vec![0.5, 0.5, 1.0]).unwrap(),
        Stratum::new(vec![true, true, false], vec![0.0, 1.0, 1.0]).unwrap(),
    ];
    let ds = StratifiedDataset::new(strata, Design::Scre);
    let spec = RankScoreSpec::stephenson(2).unwrap();
    let null = exact_null(&ds, &spec).unwrap();
    let n = ds.total_units();

    for k in [2usize, 5, 8, n] {
        for c in [-0.25, 0.0, 0.25, 0.5] {
            let (p_lo, p_hi) =
                test_quantile_bounds(&ds, &spec, k, c, &null, Method::IlpExact).unwrap();
            assert!(p_lo <= p_hi + 1e-12);
            for _ in 0..50 {
                let seed: u64 = rng.gen();
                let permuted = permute_units(&ds, seed);
                let p = test_quantile(
                    &permuted,
                    &spec,
                    TiePolicy::FirstByUnitOrder,
                    k,
                    c,
                    &null,
                    Method::IlpExact,
                )
                .unwrap();
                assert!(
                    p_lo - 1e-12 <= p && p <= p_hi + 1e-12,
                    "seeded p {p} outside [{p_lo}, {p_hi}] at k={k}, c={c}"
                );
            }
        }
        // Upper bound at c stays below the lower bound at any larger c.
        for (c1, c2) in [(-0.25, 0.0), (0.0, 0.25), (0.25, 0.5), (0.5, 1.0)] {
            let (_, p_hi) =
                test_quantile_bounds(&ds, &spec, k, c1, &null, Method::IlpExact).unwrap();
            let (p_lo2, _) =
                test_quantile_bounds(&ds, &spec, k, c2, &null, Method::IlpExact).unwrap();
            assert!(p_hi <= p_lo2 + 1e-12);
        }
    }

    // Open interiors of the three confidence sets coincide: the limit value
    // is shared across tie handlings (only boundary membership may differ).
    let alpha = 0.3;
    for k in 1..=n {
        let via_upper = scan_lower_limit(&ds, &spec, TiePolicy::TreatedFirst, k, alpha, &null);
        let via_seeded =
            scan_lower_limit(&ds, &spec, TiePolicy::FirstByUnitOrder, k, alpha, &null);
        let via_lower = scan_lower_limit(&ds, &spec, TiePolicy::ControlsFirst, k, alpha, &null);
        assert_eq!(via_upper, via_seeded, "k={k}");
        assert_eq!(via_upper, via_lower, "k={k}");
    }
    // And the batched inversion agrees with the scan oracle.
    let report = invert_confidence(
        &ds,
        &spec,
        TiePolicy::FirstByUnitOrder,
        alpha,
        &null,
        Method::IlpExact,
        &InversionOptions::default(),
    )
    .unwrap();
    for limit in &report.limits {
        let oracle = scan_lower_limit(&ds, &spec, TiePolicy::TreatedFirst, limit.k, alpha, &null);
        assert_eq!(limit.lower, oracle, "k={}", limit.k);
    }
    pass(8, "seeded p bracketed by bounds; CI interiors coincide across tie handlings");
}

#[test]
fn criterion_09_sensitivity_reductions() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0xACC9);

    // (a) Matched pairs at Gamma = 1: finite-sample p equals the exact
    // randomization p to 1e-12.
    let pairs: Vec<Stratum> = (0..6)
        .map(|_| {
            Stratum::new(
                vec![true, false],
                vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)],
            )
            .unwrap()
        })
        .collect();
    let matched = StratifiedDataset::new(pairs, Design::MatchedSets);
    let spec = RankScoreSpec::stephenson(2).unwrap();
    let scre_null = exact_null(&matched.with_design(Design::Scre), &spec).unwrap();
    for k in [3usize, 6, 9, 12] {
        for c in [-0.5, 0.0, 0.5] {
            let p_sen =
                finite_sample_pvalue(&matched, &spec, 1.0, k, c, Method::IlpExact).unwrap();
            let p_scre = test_quantile(
                &matched.with_design(Design::Scre),
                &spec,
                TiePolicy::FirstByUnitOrder,
                k,
                c,
                &scre_null,
                Method::IlpExact,
            )
            .unwrap();
            assert!(
                (p_sen - p_scre).abs() <= 1e-12,
                "k={k}, c={c}: {p_sen} vs {p_scre}"
            );
        }
    }

    // (b) Matched-pair dominating tail equals the corner-enumeration worst
    // case on a 12-pair design for Gamma in {1, 2, 5}. With common pair
    // scores phi = (1, 2) the statistic is 12 + B, B a sum of independent
    // coins whose head probabilities are chosen per pair from the corner
    // set {1/(1+G), 1/2, G/(1+G)}.
    let s_pairs = 12usize;
    let coin_total = 3usize.pow(s_pairs as u32);
    let pair_data: Vec<Stratum> = (0..s_pairs)
        .map(|i| Stratum::new(vec![true, false], vec![i as f64 + 0.5, i as f64]).unwrap())
        .collect();
    let pair_ds = StratifiedDataset::new(pair_data, Design::MatchedSets);
    let wil = RankScoreSpec::wilcoxon();
    for gamma in [1.0, 2.0, 5.0] {
        let bound = finite_sample_bound(&pair_ds, &wil, gamma).unwrap();
        let qs = [1.0 / (1.0 + gamma), 0.5, gamma / (1.0 + gamma)];
        // max over corner profiles of Pr(B >= b) for each b.
        let mut best_tail = vec![0.0f64; s_pairs + 2];
        for profile in 0..coin_total {
            let mut pmf = vec![0.0f64; s_pairs + 1];
            pmf[0] = 1.0;
            let mut code = profile;
            for _ in 0..s_pairs {
                let q = qs[code % 3];
                code /= 3;
                for b in (0..s_pairs).rev() {
                    let stay = pmf[b];
                    pmf[b + 1] += stay * q;
                    pmf[b] = stay * (1.0 - q);
                }
            }
            let mut tail = 0.0;
            for b in (0..=s_pairs).rev() {
                tail += pmf[b];
                if tail > best_tail[b] {
                    best_tail[b] = tail;
                }
            }
        }
        for b in 0..=s_pairs {
            let t = s_pairs as f64 + b as f64;
            assert!(
                (bound.tail(t) - best_tail[b]).abs() <= 1e-9,
                "gamma {gamma}, b={b}: bound {} vs corner {}",
                bound.tail(t),
                best_tail[b]
            );
        }
    }

    // (c) Worst-case moments match exhaustive confounder-corner search on
    // random sets up to size 6, in both orientations.
    for trial in 0..30 {
        let n = rng.gen_range(2..=6);
        let one_treated = trial % 2 == 0;
        let mut z = vec![false; n];
        if one_treated {
            z[rng.gen_range(0..n)] = true;
        } else {
            for slot in z.iter_mut() {
                *slot = true;
            }
            z[rng.gen_range(0..n)] = false;
        }
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ds = StratifiedDataset::new(
            vec![Stratum::new(z.clone(), y.clone()).unwrap()],
            Design::MatchedSets,
        );
        let spec = random_spec(&mut rng, n);
        let phi = spec.scores(0, n).unwrap();
        // Statistic value when unit at rank r is the selected one.
        let totals: f64 = phi.iter().sum();
        let value_at = |r: usize| {
            if one_treated {
                phi[r]
            } else {
                totals - phi[r]
            }
        };
        for gamma in [1.0, 1.8, 3.0] {
            let moments = worst_case_moments(&ds, &spec, gamma).unwrap();
            let mut best_mean = f64::NEG_INFINITY;
            let mut best_var = f64::NEG_INFINITY;
            for corner in 0u32..(1 << n) {
                let w: Vec<f64> = (0..n)
                    .map(|r| if corner >> r & 1 == 1 { gamma } else { 1.0 })
                    .collect();
                let wsum: f64 = w.iter().sum();
                let mean =
                    (0..n).map(|r| w[r] * value_at(r)).sum::<f64>() / wsum;
                let second =
                    (0..n).map(|r| w[r] * value_at(r) * value_at(r)).sum::<f64>() / wsum;
                if mean > best_mean + 1e-12 {
                    best_mean = mean;
                    best_var = second - mean * mean;
                } else if (mean - best_mean).abs() <= 1e-12 {
                    best_var = best_var.max(second - mean * mean);
                }
            }
            assert!(
                (moments.per_set[0].mean - best_mean).abs() <= 1e-10,
                "trial {trial} gamma {gamma}: mean {} vs corner {best_mean}",
                moments.per_set[0].mean
            );
            assert!(
                (moments.per_set[0].variance - best_var.max(0.0)).abs() <= 1e-10,
                "trial {trial} gamma {gamma}: variance {} vs corner {best_var}",
                moments.per_set[0].variance
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}");
    pass(9, "sensitivity tails reduce correctly and match corner enumeration");
}

#[test]
fn criterion_10_gamma_monotonicity_and_cutoff() {
    let mut rng = StdRng::seed_from_u64(0xACC10);
    // Simulated matched data with a real effect so the tests reject at
    // Gamma = 1: 30 sets of one treated and two controls.
    let sets: Vec<Stratum> = (0..30)
        .map(|_| {
            let base: f64 = rng.gen_range(-1.0..1.0);
            Stratum::new(
                vec![true, false, false],
                vec![
                    base + 1.5 + rng.gen_range(-0.2..0.2),
                    base + rng.gen_range(-0.2..0.2),
                    base + rng.gen_range(-0.2..0.2),
                ],
            )
            .unwrap()
        })
        .collect();
    let ds = StratifiedDataset::new(sets, Design::MatchedSets);
    let spec = RankScoreSpec::stephenson(2).unwrap();
    let n = ds.total_units();

    let gammas = [1.0, 1.2, 1.5, 2.0, 3.0, 5.0, 8.0];
    for k in [n, n - 5, n - 15] {
        let mut prev_f = 0.0;
        let mut prev_g = 0.0;
        for &gamma in &gammas {
            let pf = finite_sample_pvalue(&ds, &spec, gamma, k, 0.0, Method::IlpExact).unwrap();
            let pg = gaussian_tail_pvalue(&ds, &spec, gamma, k, 0.0, Method::IlpExact).unwrap();
            assert!(pf >= prev_f - 1e-12, "finite tail p not monotone at k={k}");
            assert!(pg >= prev_g - 1e-12, "gaussian tail p not monotone at k={k}");
            prev_f = pf;
            prev_g = pg;
        }
    }

    let alpha = 0.1;
    for tail in [SensitivityTail::FiniteSample, SensitivityTail::Gaussian] {
        let cutoff =
            gamma_cutoff(&ds, &spec, alpha, n, 0.0, tail, Method::IlpExact, 0.01).unwrap();
        let p_at = |gamma: f64| match tail {
            SensitivityTail::FiniteSample => {
                finite_sample_pvalue(&ds, &spec, gamma, n, 0.0, Method::IlpExact).unwrap()
            }
            SensitivityTail::Gaussian => {
                gaussian_tail_pvalue(&ds, &spec, gamma, n, 0.0, Method::IlpExact).unwrap()
            }
        };
        match cutoff {
            GammaCutoff::BelowOne => {
                assert!(p_at(1.0) > alpha, "cutoff below one but rejects at 1");
            }
            GammaCutoff::Value(value) => {
                // Dense grid scan, finer than the search resolution.
                let mut grid_best = f64::NAN;
                let mut g = 1.0;
                while g <= value + 1.0 {
                    if p_at(g) <= alpha {
                        grid_best = g;
                    }
                    g += 0.005;
                }
                assert!(
                    (value - grid_best).abs() <= 0.01 + 0.005,
                    "{tail:?}: cutoff {value} vs grid {grid_best}"
                );
            }
            GammaCutoff::AboveCap(_) => panic!("unexpected unbounded cutoff"),
        }
    }
    pass(10, "worst-case p monotone in Gamma; cutoff matches a dense grid scan");
}

#[test]
fn criterion_11_k_equals_n_matches_direct_frt() {
    let mut rng = StdRng::seed_from_u64(0xACC11);
    for instance in 0..20 {
        // Keep the joint assignment space at or below 10^4 for the direct
        // oracle.
        let ds = loop {
            let candidate = random_instance(&mut rng, 3, 4);
            if candidate.total_treated() > 0
                && qte::nulldist::joint_assignment_count(&candidate) <= 10_000
            {
                break candidate;
            }
        };
        let max_rank = ds.strata().iter().map(|s| s.len()).max().unwrap();
        let spec = random_spec(&mut rng, max_rank);
        let c = rng.gen_range(-1i32..=1) as f64 / 2.0;
        let n = ds.total_units();
        let null = exact_null(&ds, &spec).unwrap();
        let p = test_quantile(
            &ds,
            &spec,
            TiePolicy::FirstByUnitOrder,
            n,
            c,
            &null,
            Method::IlpExact,
        )
        .unwrap();

        // Direct constant-effect randomization test: impute the control
        // outcomes, enumerate every joint assignment, compare statistics.
        let flat_y = ds.flat_outcomes();
        let flat_z = ds.flat_assignments();
        let imputed: Vec<f64> = flat_y
            .iter()
            .zip(&flat_z)
            .map(|(&y, &z)| if z { y - c } else { y })
            .collect();
        let observed =
            stratified_statistic(&ds, &imputed, &spec, TiePolicy::FirstByUnitOrder).unwrap();

        let per_stratum_subsets: Vec<Vec<Vec<bool>>> = ds
            .strata()
            .iter()
            .map(|stratum| {
                let n_s = stratum.len();
                let m_s = stratum.treated_count();
                (0u32..(1 << n_s))
                    .filter(|mask| mask.count_ones() as usize == m_s)
                    .map(|mask| (0..n_s).map(|i| mask >> i & 1 == 1).collect())
                    .collect()
            })
            .collect();
        let mut indices = vec![0usize; ds.num_strata()];
        let mut ge = 0usize;
        let mut count = 0usize;
        'outer: loop {
            let strata: Vec<Stratum> = ds
                .strata()
                .iter()
                .enumerate()
                .map(|(s, stratum)| {
                    Stratum::new(
                        per_stratum_subsets[s][indices[s]].clone(),
                        stratum.outcomes().to_vec(),
                    )
                    .unwrap()
                })
                .collect();
            // Statistic under this assignment with the same imputed vector.
            let reassigned = StratifiedDataset::new(strata, Design::Scre);
            let t = stratified_statistic(
                &reassigned,
                &imputed,
                &spec,
                TiePolicy::FirstByUnitOrder,
            )
            .unwrap();
            if t >= observed - 1e-12 {
                ge += 1;
            }
            count += 1;
            for s in 0..indices.len() {
                indices[s] += 1;
                if indices[s] < per_stratum_subsets[s].len() {
                    continue 'outer;
                }
                indices[s] = 0;
            }
            break;
        }
        let direct = ge as f64 / count as f64;
        assert!(
            (p - direct).abs() <= 1e-12,
            "instance {instance}: p {p} vs direct FRT {direct}"
        );
    }
    pass(11, "k=N test equals the direct constant-effect randomization test");
}

#[test]
fn criterion_12_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut csv = String::from("stratum,treated,outcome\n");
    let mut rng = StdRng::seed_from_u64(0xACC12);
    for s in 1..=5 {
        for i in 0..6 {
            // A tie-rich grid so the tie seed matters.
            let y = rng.gen_range(-4i32..=4) as f64 / 2.0;
            csv.push_str(&format!("{s},{},{y}\n", u8::from(i < 3)));
        }
    }
    std::fs::write(&data, csv).unwrap();

    let run = |tag: &str| {
        let json = dir.path().join(format!("report-{tag}.json"));
        let limits = dir.path().join(format!("limits-{tag}.csv"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_qte"))
            .args([
                "run",
                "--data",
                data.to_str().unwrap(),
                "--score",
                "stephenson",
                "--stephenson-h",
                "3",
                "--alpha",
                "0.2",
                "--null",
                "mc",
                "--mc-reps",
                "20000",
                "--mc-seed",
                "77",
                "--tie-seed",
                "5",
                "--thresholds",
                "0",
                "--output-json",
                json.to_str().unwrap(),
                "--output-csv",
                limits.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        (
            std::fs::read(&limits).unwrap(),
            std::fs::read_to_string(&json).unwrap(),
        )
    };
    let (csv_a, json_a) = run("a");
    let (csv_b, json_b) = run("b");
    assert_eq!(csv_a, csv_b, "limits.csv must be byte-identical");

    let strip = |text: &str| {
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["provenance"]
            .as_object_mut()
            .unwrap()
            .remove("runtime_secs");
        v
    };
    assert_eq!(strip(&json_a), strip(&json_b), "report fields must match");

    // The emitted CSV is sorted by k with nondecreasing limits.
    let text = String::from_utf8(csv_a).unwrap();
    let mut prev_k = 0usize;
    let mut prev_lower = f64::NEG_INFINITY;
    for line in text.lines().skip(1) {
        let mut fields = line.split(',');
        let k: usize = fields.next().unwrap().parse().unwrap();
        let lower_text = fields.next().unwrap();
        let lower = if lower_text == "-inf" {
            f64::NEG_INFINITY
        } else {
            lower_text.parse().unwrap()
        };
        assert!(k > prev_k);
        assert!(lower >= prev_lower);
        prev_k = k;
        prev_lower = lower;
    }
    pass(12, "identical config, data, and seeds give byte-identical CSV output");
}

#[test]
fn criterion_13_scale_smoke() {
    let mut rng = StdRng::seed_from_u64(0xACC13);
    let strata: Vec<Stratum> = (0..900)
        .map(|_| {
            let mut z = vec![false; 10];
            for slot in z.iter_mut().take(5) {
                *slot = true;
            }
            let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Stratum::new(z, y).unwrap()
        })
        .collect();
    let ds = StratifiedDataset::new(strata, Design::Scre);
    let spec = RankScoreSpec::stephenson(3).unwrap();
    let null = mc_null(&ds, &spec, 100_000, 900).unwrap();
    let options = InversionOptions {
        ks: None,
        thresholds: vec![0.0],
    };

    let dp_start = Instant::now();
    let dp_report = invert_confidence(
        &ds,
        &spec,
        TiePolicy::FirstByUnitOrder,
        0.1,
        &null,
        Method::IlpExact,
        &options,
    )
    .unwrap();
    let dp_time = dp_start.elapsed();

    let lp_start = Instant::now();
    let lp_report = invert_confidence(
        &ds,
        &spec,
        TiePolicy::FirstByUnitOrder,
        0.1,
        &null,
        Method::LpConservative,
        &options,
    )
    .unwrap();
    let lp_time = lp_start.elapsed();

    assert_eq!(dp_report.limits.len(), 9000);
    // Conservative limits never exceed the exact ones.
    for (lp, dp) in lp_report.limits.iter().zip(&dp_report.limits) {
        assert!(lp.lower <= dp.lower);
    }
    assert!(
        dp_time.as_secs_f64() < 60.0,
        "DP inversion took {dp_time:?}"
    );
    assert!(
        lp_time.as_secs_f64() * 3.0 <= dp_time.as_secs_f64(),
        "greedy inversion ({lp_time:?}) not 3x faster than DP ({dp_time:?})"
    );
    pass(
        13,
        &format!(
            "900x10 inversion: DP {:.2}s, greedy {:.2}s",
            dp_time.as_secs_f64(),
            lp_time.as_secs_f64()
        ),
    );
}
