//! Dense tensors, reverse-mode gradients, and the optimisation helpers the
//! model trains with.

mod gradcheck;
mod ops;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use ops::{gru_cell_step, sigmoid, softmax, GruWeights};
pub use optim::{clip_gradients, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var, COSINE_EPS};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid_scalar;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape {shape:?} does not match data length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("softmax over an empty axis")]
    EmptyAxis,
    #[error("{0}")]
    InvalidArgument(String),
}
