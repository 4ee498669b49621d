//! Self-supervised node embeddings for multiplex graphs.
//!
//! Each relation layer of a multiplex graph gets its own one-layer
//! first-order GCN encoder. Encoders are trained jointly with a node-level
//! contrastive loss (dropout-augmented positives, row-shuffled negatives), a
//! cluster-level prototype loss driven by periodic K-means, and two cross-layer
//! alignment regularizers. The fused embedding is the mean of the layer
//! embeddings.
//!
//! Module map:
//! - [`numkit`]: matrices, RNG, softmax/KL/cosine
//! - [`graphdata`]: multiplex graph model, bundle I/O, synthetic generator
//! - [`transform`]: positive (dropout) and negative (row shuffle) views
//! - [`encoder`]: per-layer GCN forward/backward
//! - [`cluster`]: K-means and prototype distributions
//! - [`objective`]: loss terms with closed-form gradients
//! - [`trainer`]: warm-up, EM-style training loop, early stopping, checkpoints
//! - [`evalkit`]: classification, clustering and similarity-search metrics
//! - [`gradcheck`]: finite-difference certification of every gradient
//! - [`config`]: run configuration with flat dotted-key JSON

// NaN-rejecting range checks read best as `!(x > 0.0)`
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod config;
pub mod encoder;
mod error;
pub mod evalkit;
pub mod gradcheck;
pub mod graphdata;
pub mod numkit;
pub mod objective;
mod parallel;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};
pub use parallel::threads_from_env;
