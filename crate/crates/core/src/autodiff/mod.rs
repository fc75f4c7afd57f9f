//! Minimal dense tensors with reverse-mode differentiation.
//!
//! The graph is rebuilt for every forward pass. Parameters enter as leaves
//! that require gradients; after [`Graph::backward`] their gradients are read
//! back with [`Graph::grad`].

mod gradcheck;
mod graph;
mod kernels;
mod norm;
mod tensor;

pub use gradcheck::finite_difference_check;
pub use graph::{Graph, Unary, Var};
pub use norm::{BatchStats, Mode, NormState, BN_EPSILON, BN_MOMENTUM};
pub use tensor::Tensor;

pub(crate) use graph::sigmoid;

#[cfg(test)]
mod tests;
