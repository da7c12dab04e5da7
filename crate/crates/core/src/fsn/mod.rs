//! Adaptive-horizon predictor: agent-centric encoder, horizon classifier
//! (APM) and a bank of per-horizon decoders of which exactly one runs per
//! agent.

pub mod frame;
pub mod loss;
pub mod model;
pub mod train;

pub use frame::{history_features, Frame};
pub use loss::{
    apm_loss, apm_loss_grad, best_mode, distillation_pairs, fsn_loss, fsn_loss_grad, fsn_loss_grad_target,
    kl_feature_distill, kl_feature_distill_grad, kl_feature_distill_grad_target, ApmLoss, FsnLoss, SampleGrad, SampleOutput,
};
pub use model::{
    to_world_modes, Apm, ApmOutput, Decoded, DecoderBank, Encoder, EncoderLatent, FsnConfig, FsnModel, HorizonChoice,
    RegressionLoss,
};
pub use train::{
    apm_accuracy, apm_items, batch_loss_grad, batch_loss_grad_target, batch_outputs, items_at_horizon, items_from_labels, train_apm, train_decoders,
    train_fsn, ApmItem, EpochLog, FsnGrads, StepLog, TrainConfig, TrainItem, TrainLog,
};
