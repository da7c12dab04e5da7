//! Minimal neural-network substrate: tensors, MLPs with manual backward
//! passes, losses, AdamW, gradient checking and a checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::finite_diff_check;
pub use loss::{
    cross_entropy, huber_loss, kl_divergence, laplace_nll, softmax, softmax_backward, squared_error,
};
pub use mlp::{Activation, Dense, Mlp, MlpCache, MlpSpec};
pub use optim::{optimizer_step, AdamW, OptimState};
pub use tensor::Tensor;
