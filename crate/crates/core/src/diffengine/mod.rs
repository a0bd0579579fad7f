//! Minimal reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, relative_error, ComponentCheck, ComponentStatus, GradCheckReport, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
