//! Batching, optimisation and the epoch loop.

mod adam;
mod batch;
mod predict;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use batch::{batch_stays, Batch, LossAveraging};
pub use predict::{collect_predictions, evaluate, predict_split, ModelPredictor, Predictor, StayPrediction};
pub use train::{
    batch_loss, compute_gradients, fit_dimensions, subsample, train, validation_loss,
    write_history, EpochRecord, StepResult, TrainConfig, TrainOutcome,
};
