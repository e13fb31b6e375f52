//! Tensors, parameter storage, reverse-mode gradients and their verification.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_subset, GradCheckReport};
pub use params::{ParamId, ParamInit, ParamSet};
pub(crate) use tape::FocalSpec;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{linear_apply, softmax_rows, Tensor};
