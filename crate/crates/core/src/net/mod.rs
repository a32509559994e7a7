//! Dense ReLU network engine: forward pass, backpropagation, masks and checkpoints.

pub mod checkpoint;
mod mask;
mod network;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use mask::{Mask, MaskLayer};
pub use network::{cross_entropy, rewind, unique_argmax, ActivationPattern, Gradients, Network};
