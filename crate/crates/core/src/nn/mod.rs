//! Small reverse-mode differentiation engine with the layers both stages need.

mod adam;
mod graph;
mod layers;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use graph::{argmax, sigmoid, softmax, softmax_xent, Graph, Mode, Var};
pub use layers::{Activation, BiLstm, Conv1dMaxPool, Dense, Embedding, Lstm};
pub use params::{Init, ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("index {index} out of range {bound} in {op}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("non-finite value produced by {op}")]
    NonFiniteValue { op: &'static str },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}
