pub mod cli;
pub mod error;
pub mod hypergraph;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod profiler;
pub mod runtime;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Gradients, Tape, Tensor, Var};
pub use model::{build_model, forward_detect, ModelConfig, Network, Variant};
