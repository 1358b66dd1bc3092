//! Default contagion on heterogeneous random financial networks.
//!
//! The crate simulates threshold-driven default cascades on directed
//! configuration-model multigraphs and evaluates the matching analytic
//! limits: law-of-large-numbers curves for the cascade state, Gaussian
//! fluctuation laws for its final state, systemic-risk aggregates, and a
//! planner's budget-constrained link-saving problem.
//!
//! The pieces fit together like this:
//!
//! 1. [`model`] describes the limiting network: characteristic classes with
//!    in/out degrees, class weights and threshold distributions, plus
//!    balance-sheet calibration of those thresholds.
//! 2. [`netgen`] samples finite node populations from a spec and wires a
//!    uniform half-edge matching.
//! 3. [`cascade`] runs the default cascade, either round-by-round or as an
//!    event-driven ball-death process with a white-ball stopping rule.
//! 4. [`limits`] evaluates the deterministic limit curves and the largest
//!    root of the white-ball function, which pins the final default
//!    fraction.
//! 5. [`clt`] evaluates covariance kernels and assembles Gaussian laws for
//!    process and final-state observables.
//! 6. [`risk`] computes wealth aggregation functions empirically and in the
//!    limit, including variance laws for random losses.
//! 7. [`intervene`] percolates incoming links (planner interventions),
//!    evaluates the intervened limits, and optimizes a plan under a budget.
//! 8. [`ensemble`] is the replicated Monte Carlo harness with
//!    law-vs-sample comparison reports.
//! 9. [`cli`] parses run configs and dispatches the command-line pipelines.
//!
//! Every random routine takes an explicit 64-bit seed and is reproducible
//! byte-for-byte; see [`seed`] for how independent streams are derived.

pub mod cascade;
pub mod cli;
pub mod clt;
pub mod ensemble;
pub mod intervene;
pub mod limits;
pub mod model;
pub mod netgen;
pub mod quad;
pub mod risk;
pub mod seed;

pub use model::{BalanceSheet, Characteristic, NetworkSpec, RiskSpec, Threshold};
pub use netgen::{NodePopulation, RealizedNetwork};
