//! Minimal differentiable-array engine: dense arrays, the forward operations
//! both denoiser architectures need, reverse-mode gradient accumulation, the
//! MSE loss, and the Adam optimizer.
//!
//! Everything is single-threaded and deterministic: identical seeds and
//! inputs produce bit-identical outputs.

mod adam;
mod array;
mod graph;
mod scalar;

pub use adam::{
    AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON, DEFAULT_LEARNING_RATE,
};
pub use array::Array;
pub use graph::{Graph, Mode, Node, NodeId, Op};
pub use scalar::{DType, Scalar};
