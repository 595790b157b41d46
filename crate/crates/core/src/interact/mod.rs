//! Interaction with a frozen layout.
//!
//! Both operations extend the fitted affinity matrix by one point `m`. The
//! existing rows keep their calibrated bandwidths; the new row is calibrated
//! to the layout's perplexity and the pair entries are symmetrized over
//! `n + 1` points, then the whole matrix is renormalized. Insertion optimizes
//! the new low-dimensional coordinate; reconstruction fixes that coordinate
//! and optimizes the new high-dimensional embedding inside a PCA subspace.

mod extension;
mod insert;
mod reconstruct;

pub use extension::extended_affinities;
pub use insert::{insert_sample, InsertResult};
pub use reconstruct::{reconstruct_embedding, ReconstructionResult};

pub use crate::optim::OptimizerConfig;
