//! Optimization: cross-entropy with an L2 kernel penalty, SGD with momentum,
//! evaluation, and Monte Carlo cross-validation.

mod config;
mod crossval;
mod data;
mod fit;
mod loss;
mod stubs;

pub use config::{EpochRecord, TrainConfig, TrainHistory};
pub use crossval::{cross_validate, CrossValidation, FoldOutcome, FoldResult, FoldTrainer, NetworkFoldTrainer};
pub use data::PreparedSet;
pub use fit::{evaluate, fit, predict_proba, LOSS_EPSILON};
pub use loss::{cross_entropy_loss, l2_penalty};
pub use stubs::{ConstantStub, NoisyOracleStub};
