use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::batch::{batch_stays, Batch, LossAveraging};
use crate::autodiff::{BatchStats, Graph, Tensor, Var};
use crate::ehr::{Dataset, FeatureSubset, Split, StayRecord};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, ForwardCtx, ModelConfig, ModelOutput, TpcModel};
use crate::objectives::{los_loss, mortality_loss, multitask_loss, LossKind};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SUBSAMPLE_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub loss_averaging: LossAveraging,
    /// Fraction of training stays used, chosen by stay.
    pub train_fraction: f64,
    pub feature_subset: FeatureSubset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 0.00226,
            epochs: 15,
            seed: 0,
            loss: LossKind::Msle,
            loss_averaging: LossAveraging::Points,
            train_fraction: 1.0,
            feature_subset: FeatureSubset::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.batch_size == 0 {
            errors.push("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errors.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            errors.push("epochs must be at least 1".to_string());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            errors.push(format!("train_fraction must be in (0, 1], got {}", self.train_fraction));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation loss (the initial model if
    /// training diverged before the first validation).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
    pub n_train: usize,
}

/// Loss, parameter gradients and batch-norm statistics for one batch.
pub struct StepResult {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub norm_stats: Vec<(usize, BatchStats)>,
}

/// `ModelConfig` with input widths taken from `data`.
pub fn fit_dimensions(config: &ModelConfig, data: &Dataset) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        features: data.n_features(),
        statics: data.n_statics(),
        diagnoses: data.n_diagnoses(),
        ..config.clone()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Builds the training objective on `out`.
pub fn batch_loss(g: &mut Graph, cfg: &ModelConfig, kind: LossKind, out: &ModelOutput, batch: &Batch) -> Result<Var> {
    let los = los_loss(g, kind, out.los, &batch.labels, &batch.loss_mask)?;
    let mortality = match out.mortality {
        Some(m) if cfg.multitask => Some(mortality_loss(g, m, &batch.mortality, &batch.loss_mask)?),
        _ => None,
    };
    multitask_loss(g, los, mortality, cfg.alpha)
}

/// Forward and backward in train mode.
pub fn compute_gradients(
    model: &TpcModel,
    batch: &Batch,
    kind: LossKind,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<StepResult> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g);
    let iv = batch.input.constants(&mut g);
    let mut ctx = ForwardCtx::train(&batch.input.mask, dropout);
    let out = model.forward(&mut g, &vars, iv, &mut ctx)?;
    let loss = batch_loss(&mut g, &model.config, kind, &out, batch)?;
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Divergence(format!("loss is {value}")));
    }
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(&model.params)
        .map(|(v, p)| g.grad(*v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    Ok(StepResult {
        loss: value,
        grads,
        norm_stats: std::mem::take(&mut ctx.norm_stats),
    })
}

/// Eval-mode objective over `stays`, pooled the same way as the training
/// loss.
pub fn validation_loss(
    model: &TpcModel,
    stays: &[&StayRecord],
    kind: LossKind,
    averaging: LossAveraging,
    batch_size: usize,
) -> Result<f64> {
    let cfg = &model.config;
    let parts: Vec<Result<(f64, usize)>> = stays
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let batch = Batch::new(chunk, cfg.horizon_hours, cfg.prediction_start_hour)?.with_averaging(averaging);
            let n = batch.weight(averaging);
            if n == 0 {
                return Ok((0.0, 0));
            }
            let mut g = Graph::new();
            let vars = model.param_constants(&mut g);
            let iv = batch.input.constants(&mut g);
            let mut ctx = ForwardCtx::eval(&batch.input.mask);
            let out = model.forward(&mut g, &vars, iv, &mut ctx)?;
            let loss = batch_loss(&mut g, cfg, kind, &out, &batch)?;
            Ok((g.value(loss).item()? * n as f64, n))
        })
        .collect();
    let (mut total, mut count) = (0.0, 0usize);
    for p in parts {
        let (s, n) = p?;
        total += s;
        count += n;
    }
    if count == 0 {
        return Err(Error::DegenerateMask("no validation points at or past the first labelled hour".into()));
    }
    Ok(total / count as f64)
}

/// `floor(fraction * n)` stays chosen with `rng`, kept in input order.
pub fn subsample<'a>(stays: &[&'a StayRecord], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<&'a StayRecord> {
    if fraction >= 1.0 {
        return stays.to_vec();
    }
    let k = (fraction * stays.len() as f64).floor() as usize;
    let mut idx: Vec<usize> = (0..stays.len()).collect();
    idx.shuffle(rng);
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| stays[i]).collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains on the training split and keeps the epoch with the lowest
/// validation loss.
pub fn train(dataset: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = dataset.select_features(cfg.feature_subset)?;
    let mc = fit_dimensions(model_config, &data)?;
    let hash = data.meta.feature_order_hash();
    let mut subsample_rng = stream(cfg.seed, SUBSAMPLE_STREAM);
    let train_stays = subsample(&data.split(Split::Train), cfg.train_fraction, &mut subsample_rng);
    let val_stays = data.split(Split::Val);
    if train_stays.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }
    if val_stays.is_empty() {
        return Err(Error::Split("validation split is empty".into()));
    }

    let mut model = TpcModel::new(mc.clone(), cfg.seed)?;
    let mut shuffle_rng = stream(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream(cfg.seed, DROPOUT_STREAM);
    let mut adam = AdamState::new(&model.params);
    let adam_cfg = AdamConfig::with_lr(cfg.learning_rate);
    let snapshot = |model: &TpcModel, rng: &ChaCha8Rng, epoch: usize| {
        let mut c = Checkpoint::new(model, &hash, Some(rng.clone()), epoch);
        c.feature_subset = cfg.feature_subset;
        c
    };

    let mut best = snapshot(&model, &dropout_rng, 0);
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;
    let start = Instant::now();

    'epochs: for epoch in 1..=cfg.epochs {
        let batches = batch_stays(&train_stays, cfg.batch_size, &mut shuffle_rng, mc.horizon_hours, mc.prediction_start_hour)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in batches {
            let batch = batch.with_averaging(cfg.loss_averaging);
            let n = batch.weight(cfg.loss_averaging);
            if n == 0 {
                continue;
            }
            let step = compute_gradients(&model, &batch, cfg.loss, Some(&mut dropout_rng))
                .and_then(|s| adam.step(&mut model.params, &s.grads, &adam_cfg).map(|_| s));
            match step {
                Ok(s) => {
                    model.apply_norm_stats(&s.norm_stats);
                    sum += s.loss * n as f64;
                    count += n;
                }
                Err(Error::Divergence(msg)) => {
                    log::error!("epoch {epoch}: {msg}");
                    diverged = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = validation_loss(&model, &val_stays, cfg.loss, cfg.loss_averaging, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: if count > 0 { sum / count as f64 } else { f64::NAN },
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} ({:.1}s)",
            record.train_loss,
            record.val_loss,
            record.wall_seconds
        );
        history.push(record);
        if !val_loss.is_finite() {
            diverged = Some(format!("epoch {epoch}: validation loss is {val_loss}"));
            break;
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = Some(epoch);
            best = snapshot(&model, &dropout_rng, epoch);
        }
    }

    Ok(TrainOutcome {
        checkpoint: best,
        history,
        best_epoch,
        diverged,
        n_train: train_stays.len(),
    })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
