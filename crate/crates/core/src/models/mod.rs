//! The five classifier architectures, the class-weighted loss and the
//! train-to-best-dev-loss loop.

mod classifier;
mod loss;
mod train;

pub use classifier::{
    AdditiveAttention, Architecture, Body, Classifier, Hyperparameters, InputShape, ModelConfig, ResidualBlock,
};
pub use loss::{weighted_ce_loss, weighted_ce_node, PROB_EPS};
pub use train::{evaluate_loss, train_model, ModelSnapshot, TrainBudget, TrainedModel};
