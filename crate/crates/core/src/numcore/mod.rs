//! Dense tensors and reverse-mode differentiation.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport};
pub use graph::{Graph, Var};
pub use tensor::{softmax_slice, Tensor};
