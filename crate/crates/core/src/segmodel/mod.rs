//! Per-pixel patch-MLP encoder with a growing linear classifier head, its
//! exact backward pass, and the `FCLK` checkpoint container.

mod checkpoint;
mod model;

pub use checkpoint::{Checkpoint, NamedBlock, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{backward, forward, forward_pass, grow_head, Dense, ForwardPass, ModelConfig, ModelParams, Prediction};
