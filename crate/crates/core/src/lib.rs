//! Federated learning with frequency-domain filtering of client models.
//!
//! Each client update is flattened into a square matrix, transformed with a
//! 2-D DCT-II, and reduced to its low-frequency coefficients. Those
//! fingerprints are clustered with HDBSCAN on cosine distance and only the
//! largest cluster is averaged into the next global model. The crate also
//! contains the poisoning attacks, baseline aggregators and data plumbing
//! needed to run the defense against them.

pub mod aggregation;
pub mod attacks;
pub mod clustering;
pub mod data;
pub mod error;
pub mod frequency;
pub mod harness;
pub mod model;

pub use error::{Error, Result};
