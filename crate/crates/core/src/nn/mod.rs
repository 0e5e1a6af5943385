//! A small deterministic tensor engine: forward and analytic backward for
//! the layers the predictor needs, AdamW, gradient checking and the
//! checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
#[cfg(test)]
mod layer_checks;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::Conv2dGeom;
pub use optim::{AdamW, GroupHyper};
pub use tensor::{Scalar, Tensor};
