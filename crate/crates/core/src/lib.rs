//! Neighborhood-order learning graph attention networks.
//!
//! Every node, at every layer, picks the exact hop distance it aggregates
//! from. A hop network scores the candidate orders, a straight-through
//! Gumbel-Softmax sampler makes the discrete choice, and an embedding
//! network runs GATv2 attention over the chosen exact-distance ring.
//!
//! Module map:
//! - [`diffcore`]: a small reverse-mode differentiation tape, finite
//!   difference checking and Adam with decoupled weight decay.
//! - [`graph`]: KNN similarity graphs, exact k-hop indexes and datasets.
//! - [`sampler`]: Gumbel noise, Gumbel-Softmax and straight-through sampling.
//! - [`layers`]: the GATv2 attention layer and the MLP classification head.
//! - [`model`]: the layered hop/embedding network composition and the plain
//!   GATv2 baseline.
//! - [`pipeline`]: featurization, splits, training, metrics, synthetic
//!   benchmarks and experiment orchestration.

// `!(x > 0.0)` is the NaN-rejecting form of the positivity checks
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod sampler;

pub use error::{Error, Result};
