//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use graph::{half_ln_two_pi, kl_diag_gaussian, Gradients, Graph, NodeId, Op};
pub use tensor::{sigmoid, softmax, softplus, Tensor};
