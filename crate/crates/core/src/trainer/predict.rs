use rayon::prelude::*;

use crate::ehr::{Dataset, Split, StayRecord};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ForwardCtx, ModelInput, TpcModel};
use crate::objectives::{evaluate_predictions, MetricsReport, PredictionSet};

/// Hourly outputs for one stay.
#[derive(Clone, Debug, PartialEq)]
pub struct StayPrediction {
    /// Remaining stay in days per hour.
    pub los: Vec<f64>,
    /// Mortality probability per hour.
    pub mortality: Option<Vec<f64>>,
}

/// Anything that maps stays to hourly remaining-stay estimates.
pub trait Predictor: Sync {
    fn predict_batch(&self, stays: &[&StayRecord]) -> Result<Vec<StayPrediction>>;
}

/// Eval-mode wrapper around a model.
pub struct ModelPredictor<'a> {
    pub model: &'a TpcModel,
}

impl Predictor for ModelPredictor<'_> {
    fn predict_batch(&self, stays: &[&StayRecord]) -> Result<Vec<StayPrediction>> {
        let cfg = &self.model.config;
        let input = ModelInput::from_stays(stays, cfg.horizon_hours)?;
        let mut g = crate::autodiff::Graph::new();
        let vars = self.model.param_constants(&mut g);
        let iv = input.constants(&mut g);
        let mut ctx = ForwardCtx::eval(&input.mask);
        let out = self.model.forward(&mut g, &vars, iv, &mut ctx)?;
        let t_n = input.hours();
        let los = g.value(out.los).data();
        let mort = out.mortality.map(|m| g.value(m).data().to_vec());
        Ok(stays
            .iter()
            .enumerate()
            .map(|(b, s)| {
                let used = s.hours().min(t_n);
                let row = b * t_n..b * t_n + used;
                StayPrediction {
                    los: los[row.clone()].to_vec(),
                    mortality: mort.as_ref().map(|m| m[row].to_vec()),
                }
            })
            .collect())
    }
}

/// Runs `predictor` over `stays` in chunks (in parallel) and pools the
/// hourly points in stay order. Points before `start_hour` are unmasked.
pub fn collect_predictions(
    predictor: &dyn Predictor,
    stays: &[&StayRecord],
    start_hour: usize,
    batch_size: usize,
) -> Result<PredictionSet> {
    let chunks: Vec<Result<Vec<StayPrediction>>> = stays
        .par_chunks(batch_size.max(1))
        .map(|chunk| predictor.predict_batch(chunk))
        .collect();
    let mut set = PredictionSet::default();
    let mut it = stays.iter();
    for chunk in chunks {
        for p in chunk? {
            let s = it.next().ok_or_else(|| Error::Wiring("predictor returned extra stays".into()))?;
            if p.los.len() > s.hours() {
                return Err(Error::Wiring(format!("prediction for stay {} is too long", s.stay_id)));
            }
            let label = f64::from(u8::from(s.mortality));
            for (i, y_hat) in p.los.iter().enumerate() {
                let hour = i + 1;
                set.pred.push(*y_hat);
                set.truth.push(s.los_labels[i]);
                set.mask.push(hour >= start_hour);
                set.hour.push(hour);
                set.stay_id.push(s.stay_id);
                if let Some(m) = &p.mortality {
                    set.mortality_prob.push(m[i]);
                    set.mortality_label.push(label);
                }
            }
        }
    }
    if it.next().is_some() {
        return Err(Error::Wiring("predictor returned too few stays".into()));
    }
    if !set.mortality_prob.is_empty() && set.mortality_prob.len() != set.len() {
        return Err(Error::Wiring("mortality predicted for some stays only".into()));
    }
    Ok(set)
}

/// Predictions of a checkpoint on one split, after checking that the
/// dataset's feature order matches.
pub fn predict_split(checkpoint: &Checkpoint, dataset: &Dataset, split: Split, batch_size: usize) -> Result<PredictionSet> {
    let data = dataset.select_features(checkpoint.feature_subset)?;
    checkpoint.check_dataset(&data.meta.feature_order_hash())?;
    let model = checkpoint.model()?;
    let stays = data.split(split);
    if stays.is_empty() {
        return Err(Error::Split(format!("{} split is empty", split.name())));
    }
    collect_predictions(
        &ModelPredictor { model: &model },
        &stays,
        model.config.prediction_start_hour,
        batch_size,
    )
}

pub fn evaluate(checkpoint: &Checkpoint, dataset: &Dataset, split: Split) -> Result<MetricsReport> {
    evaluate_predictions(&predict_split(checkpoint, dataset, split, 32)?)
}
