#![cfg_attr(not(test), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod deep;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod optim;
pub mod piecewise;
pub mod single_neuron;
pub mod wide;

pub use error::{Error, Result};
pub use data::Dataset;
pub use linalg::{DenseMatrix, DenseVector};
pub use model::{Rates, Regime};
