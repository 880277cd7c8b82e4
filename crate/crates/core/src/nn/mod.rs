//! Minimal dense numeric core: tensors, the layer vocabulary the pipeline
//! needs with explicit backward passes, optimizers, checkpoints and a
//! finite-difference gradient checker.

pub mod activation;
pub mod checkpoint;
pub mod conv;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod module;
pub mod norm;
pub mod optim;
pub mod tensor;

pub use activation::{relu, sigmoid, upsample_nearest2x, upsample_nearest2x_backward, Relu, Sigmoid};
pub use checkpoint::Checkpoint;
pub use conv::Conv2d;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use module::{join, named_grads, named_tensors, param_count, zero_grads, Module, Slot};
pub use norm::BatchNorm;
pub use optim::{Adam, LrSchedule, Sgd};
pub use tensor::{Param, Tensor};
