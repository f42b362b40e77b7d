//! Shared fixtures for unit tests.

use crate::data::{Design, Stratum, StratifiedDataset};

/// Three strata of six units (three treated each). With Stephenson h=4
/// scores at threshold 0 the per-stratum increments are (3,7,4), (1,4,10),
/// (6,1,4), and the statistic at constant effect 0 is 40.
pub fn example_dataset() -> StratifiedDataset {
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
