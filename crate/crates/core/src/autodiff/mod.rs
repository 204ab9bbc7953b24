//! Dense tensors, a reverse-mode tape, Adam, and parameter checkpoints.

mod adam;
pub mod checkpoint;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use tape::{sigmoid, softmax, std_pop, Tape, Var};
pub use tensor::{Dtype, ParamId, ParamStore, Real, Tensor};
