//! Distribution-free null tail of the stratified rank-score statistic under
//! the stratified completely randomized design, exact or Monte Carlo.
//!
//! Because the statistic is distribution free, the null law depends only on
//! each stratum's size, treated count, and score table: each stratum
//! contributes the score sum of a uniformly random m-subset of the ranks
//! 1..=n, independently across strata. The exact law is computed per stratum
//! by enumeration and convolved across strata; score sums are quantized to
//! 1e-9 before any lookup to absorb float noise.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::StratifiedDataset;
use crate::scores::RankScoreSpec;
use crate::{Error, Result};

/// Quantum for score-sum support values.
pub const SUPPORT_QUANTUM: f64 = 1e-9;

/// Default cap on the joint assignment space for exact enumeration.
pub const DEFAULT_EXACT_BUDGET: u128 = 1_000_000;

/// Default Monte Carlo replication count.
pub const DEFAULT_MC_REPS: u64 = 100_000;

pub(crate) fn quantize(x: f64) -> i128 {
    (x / SUPPORT_QUANTUM).round() as i128
}

fn dequantize(key: i128) -> f64 {
    key as f64 * SUPPORT_QUANTUM
}

/// Anything that can map an observed statistic to a right-tail probability
/// Pr(T >= t). Tails are nonincreasing with G(-inf) = 1 and G(+inf) = 0.
pub trait TailFunction: Sync {
    fn tail(&self, t: f64) -> f64;
}

/// A discrete distribution over quantized support values, with
/// right-tail lookups. This is the convolution engine shared by the exact
/// null and the finite-sample sensitivity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    keys: Vec<i128>,
    probs: Vec<f64>,
    tails: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn from_entries(entries: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut map: HashMap<i128, f64> = HashMap::new();
        for (value, prob) in entries {
            *map.entry(quantize(value)).or_insert(0.0) += prob;
        }
        Self::from_map(map)
    }

    fn from_map(map: HashMap<i128, f64>) -> Self {
        let mut pairs: Vec<(i128, f64)> = map.into_iter().collect();
        pairs.sort_unstable_by_key(|&(k, _)| k);
        let keys: Vec<i128> = pairs.iter().map(|&(k, _)| k).collect();
        let probs: Vec<f64> = pairs.iter().map(|&(_, p)| p).collect();
        let mut tails = vec![0.0; probs.len()];
        let mut acc = 0.0;
        for i in (0..probs.len()).rev() {
            acc += probs[i];
            tails[i] = acc.min(1.0);
        }
        DiscreteDistribution { keys, probs, tails }
    }

    pub fn point(value: f64) -> Self {
        Self::from_entries([(value, 1.0)])
    }

    /// Pr(T >= t), tie-inclusive, after quantizing t.
    pub fn tail(&self, t: f64) -> f64 {
        let key = quantize(t);
        let idx = self.keys.partition_point(|&k| k < key);
        if idx == self.keys.len() {
            0.0
        } else {
            self.tails[idx]
        }
    }

    /// (value, probability) pairs in increasing value order.
    pub fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.keys
            .iter()
            .zip(&self.probs)
            .map(|(&k, &p)| (dequantize(k), p))
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn min_support(&self) -> Option<f64> {
        self.keys.first().map(|&k| dequantize(k))
    }

    pub fn max_support(&self) -> Option<f64> {
        self.keys.last().map(|&k| dequantize(k))
    }

    pub fn convolve(&self, other: &Self) -> Self {
        convolve_pair(self, other)
    }
}

/// Convolves a list of independent distributions with a deterministic
/// balanced tree, parallelizing the two halves. The tree shape is fixed by
/// the input order, so results are bit-reproducible across runs and thread
/// counts.
pub fn convolve_all(parts: Vec<DiscreteDistribution>) -> DiscreteDistribution {
    fn go(parts: &[DiscreteDistribution]) -> DiscreteDistribution {
        match parts.len() {
            0 => DiscreteDistribution::point(0.0),
            1 => parts[0].clone(),
            n => {
                let (left, right) = parts.split_at(n / 2);
                let (a, b) = rayon::join(|| go(left), || go(right));
                convolve_pair(&a, &b)
            }
        }
    }
    go(&parts)
}

fn convolve_pair(a: &DiscreteDistribution, b: &DiscreteDistribution) -> DiscreteDistribution {
    let mut map: HashMap<i128, f64> = HashMap::with_capacity(a.len() * b.len());
    for (&ka, &pa) in a.keys.iter().zip(&a.probs) {
        for (&kb, &pb) in b.keys.iter().zip(&b.probs) {
            *map.entry(ka + kb).or_insert(0.0) += pa * pb;
        }
    }
    DiscreteDistribution::from_map(map)
}

/// How the null distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NullMode {
    Exact,
    MonteCarlo { reps: u64, seed: u64 },
}

/// The distribution-free null tail G of the stratified rank-score statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    mode: NullMode,
    dist: DiscreteDistribution,
}

impl NullDistribution {
    pub fn mode(&self) -> NullMode {
        self.mode
    }

    pub fn distribution(&self) -> &DiscreteDistribution {
        &self.dist
    }

    /// Monte Carlo standard error of the tail estimate at p, if applicable.
    pub fn standard_error(&self, p: f64) -> Option<f64> {
        match self.mode {
            NullMode::Exact => None,
            NullMode::MonteCarlo { reps, .. } => Some((p * (1.0 - p) / reps as f64).sqrt()),
        }
    }
}

impl TailFunction for NullDistribution {
    fn tail(&self, t: f64) -> f64 {
        self.dist.tail(t)
    }
}

impl TailFunction for DiscreteDistribution {
    fn tail(&self, t: f64) -> f64 {
        DiscreteDistribution::tail(self, t)
    }
}

#[derive(Serialize, Deserialize)]
struct NullDistributionWire {
    mode: NullMode,
    /// (support value, tail probability) pairs, increasing in value.
    table: Vec<(f64, f64)>,
}

impl Serialize for NullDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let table: Vec<(f64, f64)> = self
            .dist
            .keys
            .iter()
            .zip(&self.dist.tails)
            .map(|(&k, &tail)| (dequantize(k), tail))
            .collect();
        NullDistributionWire {
            mode: self.mode,
            table,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NullDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = NullDistributionWire::deserialize(deserializer)?;
        if wire.table.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(D::Error::custom("support values must be increasing"));
        }
        let mut entries = Vec::with_capacity(wire.table.len());
        for (i, &(value, tail)) in wire.table.iter().enumerate() {
            let next_tail = wire.table.get(i + 1).map_or(0.0, |&(_, t)| t);
            entries.push((value, (tail - next_tail).max(0.0)));
        }
        Ok(NullDistribution {
            mode: wire.mode,
            dist: DiscreteDistribution::from_entries(entries),
        })
    }
}

fn binom_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.saturating_mul((n - k + i) as u128) / i as u128;
    }
    acc
}

/// Exact per-stratum distribution of the score sum of a uniformly random
/// m-subset of ranks 1..=n.
fn stratum_exact_pmf(phi: &[f64], m: usize) -> DiscreteDistribution {
    let n = phi.len();
    let total = binom_u128(n, m) as f64;
    let mut counts: HashMap<i128, u64> = HashMap::new();
    if m == 0 || m > n {
        counts.insert(quantize(0.0), 1);
    } else {
        // Lexicographic enumeration of m-combinations of 0..n.
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            let sum: f64 = idx.iter().map(|&i| phi[i]).sum();
            *counts.entry(quantize(sum)).or_insert(0) += 1;
            // Advance to the next combination.
            let mut i = m;
            loop {
                if i == 0 {
                    return DiscreteDistribution::from_map(
                        counts
                            .into_iter()
                            .map(|(k, c)| (k, c as f64 / total))
                            .collect(),
                    );
                }
                i -= 1;
                if idx[i] != i + n - m {
                    break;
                }
            }
            idx[i] += 1;
            for j in i + 1..m {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    DiscreteDistribution::from_map(
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / total))
            .collect(),
    )
}

/// Size of the joint assignment space: the product of per-stratum subset
/// counts, saturating at u128::MAX.
pub fn joint_assignment_count(dataset: &StratifiedDataset) -> u128 {
    let mut joint: u128 = 1;
    for stratum in dataset.strata() {
        joint = joint.saturating_mul(binom_u128(stratum.len(), stratum.treated_count()));
    }
    joint
}

/// Exact null distribution by per-stratum enumeration and convolution.
///
/// Errors with `BudgetExceeded` when the joint assignment space (the product
/// of per-stratum subset counts) exceeds the budget.
pub fn exact_null(dataset: &StratifiedDataset, spec: &RankScoreSpec) -> Result<NullDistribution> {
    exact_null_with_budget(dataset, spec, DEFAULT_EXACT_BUDGET)
}

pub fn exact_null_with_budget(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    budget: u128,
) -> Result<NullDistribution> {
    let joint = joint_assignment_count(dataset);
    if joint > budget {
        return Err(Error::BudgetExceeded {
            required: joint,
            budget,
        });
    }
    let parts: Vec<DiscreteDistribution> = dataset
        .strata()
        .par_iter()
        .enumerate()
        .map(|(s, stratum)| {
            let phi = spec.scores(s, stratum.len())?;
            Ok(stratum_exact_pmf(&phi, stratum.treated_count()))
        })
        .collect::<Result<_>>()?;
    Ok(NullDistribution {
        mode: NullMode::Exact,
        dist: convolve_all(parts),
    })
}

/// Per-stratum sampler for Monte Carlo draws. Small strata get the full
/// list of subset score sums (one uniform index per draw); large ones fall
/// back to partial Fisher-Yates sampling. Strata sharing a score table and
/// treated count share one sums list.
enum StratumSampler {
    Table(std::sync::Arc<Vec<f64>>),
    FisherYates {
        phi: std::sync::Arc<Vec<f64>>,
        m: usize,
    },
}

const SUBSET_TABLE_LIMIT: u128 = 100_000;

fn subset_sums(phi: &[f64], m: usize) -> Vec<f64> {
    let n = phi.len();
    let mut out = Vec::with_capacity(binom_u128(n, m) as usize);
    if m == 0 || m > n {
        out.push(0.0);
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(idx.iter().map(|&i| phi[i]).sum());
        let mut i = m;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - m {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn build_samplers(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
) -> Result<Vec<StratumSampler>> {
    let mut cache: HashMap<(usize, usize), std::sync::Arc<Vec<f64>>> = HashMap::new();
    dataset
        .strata()
        .iter()
        .enumerate()
        .map(|(s, stratum)| {
            let phi = spec.scores(s, stratum.len())?;
            let m = stratum.treated_count();
            if binom_u128(stratum.len(), m) <= SUBSET_TABLE_LIMIT {
                let key = (std::sync::Arc::as_ptr(&phi) as usize, m);
                let sums = cache
                    .entry(key)
                    .or_insert_with(|| std::sync::Arc::new(subset_sums(&phi, m)))
                    .clone();
                Ok(StratumSampler::Table(sums))
            } else {
                Ok(StratumSampler::FisherYates { phi, m })
            }
        })
        .collect()
}

/// Seeded Monte Carlo null: `reps` independent assignments drawn per
/// stratum. Replication r uses its own counter-derived substream, so the
/// result is identical for a given seed regardless of thread count.
pub fn mc_null(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    reps: u64,
    seed: u64,
) -> Result<NullDistribution> {
    if reps == 0 {
        return Err(Error::InvalidArgument(
            "Monte Carlo reps must be >= 1".to_string(),
        ));
    }
    let samplers = build_samplers(dataset, spec)?;

    let chunk = 4096u64;
    let ranges: Vec<(u64, u64)> = (0..reps)
        .step_by(chunk as usize)
        .map(|lo| (lo, (lo + chunk).min(reps)))
        .collect();
    let counts = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut local: HashMap<i128, u64> = HashMap::new();
            let max_n = dataset.strata().iter().map(|s| s.len()).max().unwrap_or(0);
            let mut pool: Vec<u32> = (0..max_n as u32).collect();
            for rep in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(rep + 1);
                let mut sum = 0.0;
                for sampler in &samplers {
                    match sampler {
                        StratumSampler::Table(sums) => {
                            sum += sums[rng.gen_range(0..sums.len())];
                        }
                        StratumSampler::FisherYates { phi, m } => {
                            let n = phi.len();
                            for (i, slot) in pool.iter_mut().enumerate().take(n) {
                                *slot = i as u32;
                            }
                            for i in 0..*m {
                                let j = rng.gen_range(i..n);
                                pool.swap(i, j);
                                sum += phi[pool[i] as usize];
                            }
                        }
                    }
                }
                *local.entry(quantize(sum)).or_insert(0) += 1;
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, c) in b {
                *a.entry(k).or_insert(0) += c;
            }
            a
        });

    let dist = DiscreteDistribution::from_map(
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / reps as f64))
            .collect(),
    );
    Ok(NullDistribution {
        mode: NullMode::MonteCarlo { reps, seed },
        dist,
    })
}

/// Experimental: Monte Carlo null for Bernoulli-randomized strata. Each unit
/// of stratum s is treated independently with the user-supplied propensity.
/// Exact enumeration for such designs is out of scope.
pub fn mc_null_bernoulli(
    dataset: &StratifiedDataset,
    spec: &RankScoreSpec,
    propensities: &[f64],
    reps: u64,
    seed: u64,
) -> Result<NullDistribution> {
    if reps == 0 {
        return Err(Error::InvalidArgument(
            "Monte Carlo reps must be >= 1".to_string(),
        ));
    }
    if propensities.len() != dataset.num_strata() {
        return Err(Error::ShapeMismatch(format!(
            "{} propensities for {} strata",
            propensities.len(),
            dataset.num_strata()
        )));
    }
    if propensities.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument(
            "propensities must lie in [0, 1]".to_string(),
        ));
    }
    let tables: Vec<std::sync::Arc<Vec<f64>>> = dataset
        .strata()
        .iter()
        .enumerate()
        .map(|(s, stratum)| spec.scores(s, stratum.len()))
        .collect::<Result<_>>()?;

    let chunk = 4096u64;
    let ranges: Vec<(u64, u64)> = (0..reps)
        .step_by(chunk as usize)
        .map(|lo| (lo, (lo + chunk).min(reps)))
        .collect();
    let counts = ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let mut local: HashMap<i128, u64> = HashMap::new();
            for rep in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(rep + 1);
                let mut sum = 0.0;
                for (phi, &p) in tables.iter().zip(propensities) {
                    for &score in phi.iter() {
                        if rng.gen_bool(p) {
                            sum += score;
                        }
                    }
                }
                *local.entry(quantize(sum)).or_insert(0) += 1;
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, c) in b {
                *a.entry(k).or_insert(0) += c;
            }
            a
        });
    let dist = DiscreteDistribution::from_map(
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / reps as f64))
            .collect(),
    );
    Ok(NullDistribution {
        mode: NullMode::MonteCarlo { reps, seed },
        dist,
    })
}

/// The tie-inclusive tail p-value G(t) = Pr(T >= t).
pub fn pvalue(distribution: &NullDistribution, observed_min_statistic: f64) -> f64 {
    distribution.tail(observed_min_statistic)
}

/// p-value plus its Monte Carlo standard error (None under exact mode).
pub fn pvalue_with_se(
    distribution: &NullDistribution,
    observed_min_statistic: f64,
) -> (f64, Option<f64>) {
    let p = distribution.tail(observed_min_statistic);
    (p, distribution.standard_error(p))
}
