//! Dense tensors, seeded randomness and reverse-mode gradients for MLPs.

pub mod network;
pub mod rng;
pub mod tensor;

pub use network::{forward, loss_and_grad, Activation, Batch, BatchStats, Layer, LossKind, NetworkSpec};
pub use rng::{gaussian, RngStream};
pub use tensor::Tensor;
