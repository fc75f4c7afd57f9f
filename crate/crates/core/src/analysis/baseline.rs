use serde::{Deserialize, Serialize};

use crate::ehr::StayRecord;
use crate::error::{Error, Result};
use crate::trainer::{Predictor, StayPrediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Mean,
    Median,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(BaselineKind::Mean),
            "median" => Ok(BaselineKind::Median),
            _ => Err(Error::Config(format!("unknown baseline `{s}` (expected mean or median)"))),
        }
    }
}

/// Predicts the same remaining stay for every hour.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantPredictor {
    pub kind: BaselineKind,
    pub value: f64,
}

impl Predictor for ConstantPredictor {
    fn predict_batch(&self, stays: &[&StayRecord]) -> Result<Vec<StayPrediction>> {
        Ok(stays
            .iter()
            .map(|s| StayPrediction {
                los: vec![self.value; s.hours()],
                mortality: None,
            })
            .collect())
    }
}

/// Mean or median of `labels`.
pub fn baseline_value(kind: BaselineKind, labels: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Dataset("no training labels for the baseline".into()));
    }
    Ok(match kind {
        BaselineKind::Mean => labels.iter().sum::<f64>() / labels.len() as f64,
        BaselineKind::Median => {
            let mut v = labels.to_vec();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            }
        }
    })
}

/// Baseline fitted on the loss-eligible hours of `train`.
pub fn fit_baseline(kind: BaselineKind, train: &[&StayRecord], start_hour: usize) -> Result<ConstantPredictor> {
    let labels: Vec<f64> = train
        .iter()
        .flat_map(|s| s.los_labels.iter().skip(start_hour.saturating_sub(1)).copied())
        .collect();
    Ok(ConstantPredictor {
        kind,
        value: baseline_value(kind, &labels)?,
    })
}
