//! Differentiable stand-in for the rate-equation channel, trained on
//! simulated drive/response frames.

mod dataset;
mod model;
mod train;

pub use dataset::{decile, generate_dataset, generate_stratified, PulseKind, SurrogateSample};
pub use model::{CatConfig, Surrogate, Weights, POWER_REF_CURRENT};
pub use train::{
    evaluate_surrogate, mean_nrmse, split_frames, stratify, train_surrogate, EpochLog, StratifiedNrmse,
    SurrogateReport, SurrogateTrainConfig, STALL_EPOCHS,
};
