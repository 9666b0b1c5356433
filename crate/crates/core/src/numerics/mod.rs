//! Dense tensors, a reverse-mode autodiff tape, and the Adam optimizer.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig, LrSchedule};
pub use gradcheck::{compare_gradients, finite_difference_grad, GradCheck};
pub use graph::{sigmoid, Graph, NodeId};
pub use tensor::{matmul, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid state: {0}")]
    State(String),
}
