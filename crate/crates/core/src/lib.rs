//! Coupled distributed stochastic approximation (CDSA).
//!
//! Agents on an undirected network jointly minimize `Σ_i f_i(x, θ*)` while
//! learning the unknown parameter `θ* = argmin Σ_i h_i(θ)`. Each agent takes
//! a stochastic gradient step on both variables and then averages with its
//! neighbours through a doubly stochastic weight matrix.
//!
//! - [`network`]: topologies, Metropolis-Hastings weights, spectral gap.
//! - [`problems`]: the coupled-problem trait with ridge and logistic instances.
//! - [`cdsa`]: the iteration itself and its step-size policies.
//! - [`metrics`]: error functionals, trace averaging, slope and crossover fits.
//! - [`harness`]: seeded Monte Carlo ensembles, sweeps and result files.
//! - [`cli`]: the `cdsa` command-line front end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cdsa;
pub mod cli;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
