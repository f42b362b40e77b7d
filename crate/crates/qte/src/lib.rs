//! Finite-population randomization inference for quantiles of individual
//! treatment effects.
//!
//! The library tests hypotheses of the form "the k-th smallest individual
//! effect is at most c" in stratified randomized experiments, inverts those
//! tests into simultaneously valid lower confidence limits for every effect
//! quantile, and extends both to matched observational studies through a
//! bias-bounded sensitivity model.
//!
//! The computational core is a multiple-choice knapsack: the worst-case
//! (smallest) value of a stratified rank-score statistic over a composite
//! null is a minimum over per-stratum allocations. It is solved three ways:
//!
//! * exactly, by dynamic programming ([`knapsack::solve_dp_ilp`]);
//! * conservatively and fast, by a greedy pass over hull-transformed
//!   per-stratum increments ([`knapsack::solve_greedy_lp`]), which provably
//!   solves the LP relaxation;
//! * by brute-force enumeration, kept as a test oracle
//!   ([`knapsack::solve_brute_force`]).
//!
//! See the `qte` binary for the batch CLI front-end.

pub mod config;
pub mod csvio;
pub mod data;
pub mod inference;
pub mod knapsack;
pub mod minstat;
pub mod nulldist;
pub mod runner;
pub mod scores;
pub mod sensitivity;

mod error;

#[cfg(test)]
pub(crate) mod testdata;

pub use error::{Error, Result};
