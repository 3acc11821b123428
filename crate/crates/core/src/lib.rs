//! Normalization layers for heterogeneous data.
//!
//! Batch, layer, instance, mixture and supervised (context-wise) batch
//! normalization with train/eval semantics, per-context running statistics
//! and analytic backward passes. Also carries the pieces needed to compare
//! them end to end: k-means and diagonal GMM fitting, a small MLP with an
//! AdamW optimizer, synthetic dataset generators and classification metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the experiment
//! runner and the command line live in the `supnorm` crate.

#![no_std]
// NaN-rejecting checks read as `!(x > 0.0)`; kernels index several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod context;
pub mod data;
pub mod error;
pub mod gmm;
pub mod metrics;
pub mod model;
pub mod norm;
pub mod numeric;
pub mod rng;
pub mod train;

pub use context::{ContextAssignment, KMeansModel};
pub use data::Dataset;
pub use error::{Error, Result};
pub use gmm::{GmmModel, Responsibilities};
pub use model::Mlp;
pub use norm::{ForwardCache, NormState, Phase};
pub use numeric::{Batch, ChannelVector, Matrix};
