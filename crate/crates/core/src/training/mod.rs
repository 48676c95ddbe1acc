//! Training loop and optimizers (Adam, LAMB, EMA, learning-rate decay).

mod optim;
mod train;

pub use optim::{
    adam_step, ema_update, lamb_layer_update, lamb_step, lr_at, trust_ratio, LrDecay,
    OptimizerHyper, OptimizerKind, OptimizerState, TRUST_NORM_FLOOR,
};
pub use train::{
    train, train_loss, write_loss_csv, x0_estimate, LossOptions, LossOutput, LossRecord,
    TrainConfig, TrainOutput, SELF_COND_CLAMP,
};
