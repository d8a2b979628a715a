//! Dense tensors, a reverse-mode autodiff tape and the Adam optimizer.

mod optim;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig, ParamSet};
pub use tape::{Activation, Aggregate, Index, Tape, Var, LOG_FLOOR};
pub use tensor::{argmax, Tensor};
