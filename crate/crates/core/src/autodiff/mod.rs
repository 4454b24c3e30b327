//! Minimal dense tensors with reverse-mode differentiation.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckEntry, GradCheckReport};
pub use params::ParamSet;
pub use tape::{sigmoid, softmax_in_place, Gradients, Segments, Tape, Var, LEAKY_SLOPE, NORM_EPS};
pub use tensor::{dot, matmul_nn, matmul_nt, matmul_tn, DType, Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss([usize; 2]),
}
