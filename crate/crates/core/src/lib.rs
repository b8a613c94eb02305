//! Claim spotting with a transformer classifier trained under gradient-based
//! adversarial perturbations of its input embeddings.

pub mod adversary;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scoring;
pub mod text;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};
