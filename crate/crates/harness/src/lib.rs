//! Experiment harness: synthetic corpora, training and evaluation runs,
//! baselines, hyperparameter sweeps and ablations, with CSV output.

pub mod ablate;
pub mod corpus;
pub mod error;
pub mod finetune;
pub mod records;
pub mod run;
pub mod settings;
pub mod stats;
pub mod sweep;

pub use error::{HarnessError, Result};
