//! Training on compacted "single user, multiple items" samples with a
//! stable sigmoid cross-entropy, Adam, and rank-statistic AUC evaluation.

mod adam;
mod metrics;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use metrics::{auc, bce_loss};
pub use trainer::{
    evaluate, load_state, sample_loss, save_state, train, train_from, CurvePoint, Dataset,
    TrainHyper, TrainOutcome, TrainSample, TrainState,
};
