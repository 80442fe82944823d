//! Experiment runner for the mirror-type MCMC toolkit: configuration,
//! seeding, parallel dispatch and CSV/JSON emission of every study.

// Negated comparisons deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod config;
pub mod error;
pub mod marginals;
pub mod output;
pub mod runners;
pub mod synth;
pub mod variant;

pub use config::{resolve, Experiment, ExperimentConfig, Overrides, Preset};
pub use error::{ExperimentError, Result};
pub use runners::{run_experiment, RunReport};
