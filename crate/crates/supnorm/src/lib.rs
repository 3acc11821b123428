//! Files, experiment runner and command line for `supnorm-core`.
//!
//! * [`formats`]: JSON formats for datasets, normalization states, mixture
//!   and k-means models, and model checkpoints.
//! * [`config`]: experiment configuration files.
//! * [`experiment`]: trains each (method, seed) pair and writes run reports.
//! * [`report`]: CSV reports and the comparison table.
//! * [`cli`]: the `supnorm` command.

// NaN-rejecting checks read as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod report;

pub use error::{Error, Result};
