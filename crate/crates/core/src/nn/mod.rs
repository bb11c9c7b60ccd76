//! Minimal static-graph neural network toolkit: tensors, layers with exact
//! backward passes, ADAM, finite-difference gradient checks and checkpoints.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use layers::{
    check_chain, log_softmax, relu, relu_backward, softmax, softmax_backward, Conv2d,
    ConvTranspose2d, Dense, Layer,
};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::Real;
pub use tensor::{concat_channels, split_channels, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
