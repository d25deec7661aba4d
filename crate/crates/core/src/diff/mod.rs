//! Small dense arrays with reverse-mode gradients.

mod check;
mod gemm;
mod tape;
mod tensor;

pub use check::{grad_check, grad_check_coords};
pub use tape::{ConvGeom, Tape, Var};
pub use tensor::Tensor;
