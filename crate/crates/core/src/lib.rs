pub mod autograd;
pub mod datapipe;
pub mod error;
pub mod experiment;
pub mod inflation;
pub mod netdef;
pub mod ops;
pub mod tensor;
pub mod training;

pub use autograd::{grad_check, Differentiable, GradCheckOptions, GradCheckReport, Tape, Var};
pub use error::{Error, Result};
pub use ops::{Padding, Window};
pub use tensor::{DType, Scalar, Tensor};
