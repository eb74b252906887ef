//! Experiment harness for relscale-core: teacher-student data, sweeps, output files and acceptance checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod error;
pub mod output;
pub mod run;
pub mod sweep;
pub mod teacher;

pub use config::ExperimentConfig;
pub use error::{LabError, LabResult};
