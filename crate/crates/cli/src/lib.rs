//! Experiment harness for the `qep` command-line tool.
//!
//! An experiment is a TOML file with four sections:
//!
//! * `[model]`: `kind = "classical_ising" | "elastic" | "tfim" | "qho"` plus
//!   the model's structure and weight initialisation;
//! * `[task]`: a generator (`xor`, `parity`, `displacement`) or an inline
//!   `dataset` of `{ x, y }` examples;
//! * `[estimator]`: nudge strength, mode, learning rate and, for quantum
//!   models, the estimator, shot count and eigenstate level;
//! * `[run]`: epochs, seed (required), output directory, emit interval.

pub mod commands;
pub mod config;
pub mod error;
pub mod setup;

pub use commands::{gradcheck, sample, spectrum, train};
pub use config::{ExperimentConfig, FieldError};
pub use error::CliError;
pub use setup::{Experiment, Model};
