//! Minimal reverse-mode automatic differentiation: a tape of 2-D array
//! operations, small tanh networks, and a text checkpoint format.

pub mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use graph::{Axis, Graph, Var};
pub use mlp::{Activation, BoundMlp, Mlp};
pub use tensor::Tensor;
