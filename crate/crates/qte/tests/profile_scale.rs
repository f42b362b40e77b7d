//! Temporary profiling harness for the 900x10 smoke-test instance.

use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use qte::data::{Design, StratifiedDataset, Stratum};
use qte::knapsack::{dp_objectives, greedy_objectives};
use qte::minstat::build_min_table;
use qte::nulldist::mc_null;
use qte::scores::{RankScoreSpec, TiePolicy};

fn instance() -> StratifiedDataset {
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
    StratifiedDataset::new(strata, Design::Scre)
}

#[test]
#[ignore]
fn profile_pieces() {
    let ds = instance();
    let spec = RankScoreSpec::stephenson(3).unwrap();
    let n = ds.total_units();

    let t0 = Instant::now();
    let null = mc_null(&ds, &spec, 100_000, 900).unwrap();
    println!("mc_null: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let table = build_min_table(&ds, &spec, TiePolicy::TreatedFirst, 0.0).unwrap();
    println!("min table build: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let objs = dp_objectives(&table, n);
    println!("full dp sweep: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let _objs_small = dp_objectives(&table, 500);
    println!("capacity-500 dp sweep: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let _g = greedy_objectives(&table, n);
    println!("full greedy sweep: {:?}", t0.elapsed());

    // Size of the finite-limit zone at alpha = 0.1: ranks whose smallest
    // achievable p-value is at or below alpha.
    let candidates = qte::inference::candidate_thresholds(&ds);
    println!("candidates: {}", candidates.len());
    let c_leftmost = candidates[0] - 1.0;
    let t0 = Instant::now();
    let table_left = build_min_table(&ds, &spec, TiePolicy::TreatedFirst, c_leftmost).unwrap();
    let objs_left = dp_objectives(&table_left, n);
    println!("leftmost sweep: {:?}", t0.elapsed());
    use qte::nulldist::TailFunction;
    let kstar = (1..=n)
        .find(|&k| null.tail(objs_left[n - k]) <= 0.1)
        .unwrap_or(n + 1);
    println!("finite zone: ranks {kstar}..={n} (L = {})", n + 1 - kstar);

    // Rough distinct-limit count estimate via the rightmost probe column.
    let kbar_right = {
        let last = *candidates.last().unwrap() + 1.0;
        let t = build_min_table(&ds, &spec, TiePolicy::TreatedFirst, last).unwrap();
        let o = dp_objectives(&t, n);
        (1..=n).rev().find(|&k| null.tail(o[n - k]) > 0.1).unwrap()
    };
    println!("kbar at rightmost probe: {kbar_right}");
    let _ = objs;
}
