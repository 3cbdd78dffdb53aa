//! Minimal differentiable engine: tensors, sequential conv/dense stacks,
//! losses, reverse-mode gradients and optimizers.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use layers::{Layer, LayerSpec};
pub use loss::{cross_entropy, cross_entropy_per_sample, cross_entropy_with_grad, mse_loss, mse_with_grad};
pub use network::{Gradients, NetworkModel, Parameterized, Sequential};
pub use optim::{adam_step, msgd_step, AdamState, Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::{Scalar, Tensor};
