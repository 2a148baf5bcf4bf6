//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] walks the tape in exact reverse order and leaves the
//! gradient of the loss with respect to each leaf in the graph. Parameters
//! are owned by a [`ParameterStore`] and bound into a graph by name, so the
//! gradients can be collected back into the store afterwards.

mod checkpoint;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, TensorEntry, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use graph::{Graph, Var};
pub use optim::{LrSchedule, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{Init, Parameter, ParameterStore};
pub use tensor::Tensor;


use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero dimension")]
    EmptyDimension(Vec<usize>),
    #[error("rows have different lengths")]
    Ragged,
    #[error("{op}: index {index} out of range for bound {bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; build a new forward pass")]
    BackwardTwice,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
}
