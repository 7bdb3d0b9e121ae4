//! Differentiable primitives with explicit backward passes, a parameter
//! registry, Adam and a finite-difference gradient checker. Everything is
//! `f64`.

mod adam;
pub mod checkpoint;
mod conv;
mod dense;
pub mod gradcheck;
mod recurrent;
mod registry;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use conv::{conv1d_backward, conv1d_forward, Conv1dCache};
pub use dense::{dense_backward, dense_forward, sigmoid, Activation, Dense, DenseCache};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use recurrent::{GruCache, GruCell, LstmCache, LstmCell};
pub use registry::{ParamId, ParamRegistry};
pub use tensor::{add_assign, dot, l2_norm, matvec, matvec_t_acc, outer_acc, Tensor};

pub(crate) use dense::pair_mut;

#[derive(Debug, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
