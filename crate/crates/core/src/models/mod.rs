//! The four networks (DW-RNN, MTL-RNN and the FP-RNN and RUL-RNN
//! baselines), their losses, training and batch inference.

pub mod arch;
pub mod checks;
pub mod evaluate;
pub mod losses;
pub mod network;
pub mod predict;
pub mod train;

pub use arch::{ArchitectureSpec, HeadSpec, ModelKind, HEAD_FP, HEAD_RUL, HEAD_WEIBULL};
pub use evaluate::{evaluate, Evaluation};
pub use losses::{hinge_term, mtl_loss, Labels, LossWeights};
pub use network::{fp_prob_from_logits, Network};
pub use predict::{predict, write_predictions_csv, PredictionRecord, PREDICTION_COLUMNS};
pub use train::{
    dw_pretrain, dw_train, fit, objective_loss, train, EarlyStop, EpochRecord, History, Objective, PretrainOutcome,
    PretrainedDw, TrainConfig, TrainOutcome,
};
