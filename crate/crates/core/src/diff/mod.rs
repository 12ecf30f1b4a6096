//! A small differentiable substrate: parameter storage, the forward ops the
//! chart needs with hand-written reverse-mode gradients, a finite-difference
//! checker, and the checkpoint container.

mod checkpoint;
mod gradcheck;
mod ops;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport, REL_ERROR_FLOOR};
pub use ops::{
    compose, compose_backward, compose_into, log_softmax, score, score_backward, score_raw, softmax,
    softmax_backward, softmax_into,
};
pub use params::{ModelParams, ParamInit};
pub use tensor::Tensor;
