//! Sequential-learning lab: train one small network on a sequence of tasks
//! and compare ways of not forgetting the earlier ones.
//!
//! The engine maintains a quadratic approximation of everything learned so
//! far, either as one consolidated penalty (recursive Laplace: anchor at the
//! latest optimum, precisions summed) or as a bank of per-task penalties
//! whose centers are debiased so the bank reproduces the consolidated
//! objective exactly. The classic multi-penalty variant that anchors each
//! penalty at its own task optimum is included as the contrast case: it
//! double-counts earlier evidence and drifts from the true posterior.
//!
//! On linear-Gaussian tasks every strategy can be checked against the exact
//! conjugate posterior; [`verify`] packages those checks as a runnable
//! self-test and [`cli`] exposes runs, verification, and exports as a
//! command-line tool.
//!
//! Modules, roughly bottom-up:
//! - [`rng`], [`params`], [`error`]: deterministic randomness, vector and
//!   diagonal-matrix newtypes, error taxonomy.
//! - [`dataset`], [`tasks`]: in-memory datasets and seeded task generators.
//! - [`net`], [`fisher`]: the feedforward model, exact gradients, and
//!   diagonal empirical Fisher estimates.
//! - [`oracle`]: closed-form conjugate posteriors and a dense
//!   finite-difference Laplace reference.
//! - [`consolidate`]: penalty algebra: recursion, debiased centers,
//!   decomposition, serialized state.
//! - [`trainer`], [`report`]: penalized training, sequence orchestration,
//!   revisits, machine-readable reports.
//! - [`config`], [`verify`], [`cli`]: config schema, property suite, and
//!   the command-line harness.

pub mod cli;
pub mod config;
pub mod consolidate;
pub mod dataset;
pub mod error;
pub mod fisher;
pub mod net;
pub mod oracle;
pub mod params;
pub mod report;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use config::ExperimentConfig;
pub use consolidate::{ConsolidatedPosterior, Hyperparams, PenaltyBank, TaskId};
pub use error::{Error, Result};
pub use net::Architecture;
pub use params::{DiagPrecision, ParamVector};
pub use report::RunReport;
pub use tasks::{TaskKind, TaskSpec};
pub use trainer::{run_sequence, SequenceRun, SequenceSetup, Strategy};
