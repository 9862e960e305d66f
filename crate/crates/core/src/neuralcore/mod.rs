//! Differentiation engine and the encoder/decoder networks built on it.

mod gradcheck;
mod model;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error};
pub use model::{BoundModel, ModelConfig, ModelParams, SetBatch};
pub use tape::{Gradients, Segment, Tape, Var};
pub use tensor::{matmul, Tensor};
