//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records operations symbolically, [`Graph::forward`] evaluates
//! and caches every node, and [`Graph::backward`] propagates gradients from a
//! scalar root. Dropout takes an externally drawn mask so evaluation is fully
//! deterministic.

mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{ComputeNode, Graph, NodeId, OpKind, PassCounts, LAYER_NORM_EPS};
pub use tensor::{Real, Tensor};
