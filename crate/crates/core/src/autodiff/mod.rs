//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records primitives as they execute; [`Graph::backward`] replays
//! them in reverse. Parameters live outside the graph in a [`ParamStore`] so a
//! fresh graph can be built per training sequence and thrown away afterwards.

mod graph;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use params::{Optimizer, ParamId, ParamStore, Parameter, UpdateRule};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("cannot split last axis of width {width} into equal thirds")]
    SplitNotDivisible { width: usize },
    #[error("target index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("backward already ran on this graph")]
    BackwardTwice,
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
}
