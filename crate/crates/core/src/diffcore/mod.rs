//! Dense tensors, layer-wise reverse-mode differentiation, Adam and a
//! counter-based random stream.

mod nn;
mod optim;
mod rng;
mod tensor;

pub use nn::{GradMode, LayerSpec, Network, Trace};
pub use optim::{adam_step, OptState};
pub use rng::Rng;
pub use tensor::{DType, Real, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("backward called without retained activations for this network")]
    MissingTrace,
}
