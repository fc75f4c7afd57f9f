//! Training losses and evaluation metrics.

mod loss;
mod metrics;

pub use loss::{los_loss, mortality_loss, mse_loss, msle_loss, multitask_loss, LossKind};
pub use metrics::{
    auprc, auroc, classification_metrics, evaluate_predictions, kappa_bin, linear_kappa, mape,
    regression_metrics, ClassificationMetrics, MetricsReport, PredictionSet, RegressionMetrics,
    KAPPA_BINS, KAPPA_BIN_EDGES, MAPE_FLOOR_DAYS, MORTALITY_HOUR,
};
