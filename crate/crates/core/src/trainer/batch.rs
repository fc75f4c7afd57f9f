use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::StayRecord;
use crate::error::Result;
use crate::model::ModelInput;

/// How a batch loss is averaged: over every loss point, or per stay first
/// and then over stays.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossAveraging {
    #[default]
    Points,
    Stays,
}

/// Padded stays plus per-point targets, all `[B * T]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input: ModelInput,
    /// Remaining stay in days; 1 on padded cells.
    pub labels: Vec<f64>,
    /// Non-zero where the hour exists and is at or past the first labelled
    /// hour: 1 under point averaging, `1 / n_s` under stay averaging.
    pub loss_mask: Vec<f64>,
    /// Stay mortality label repeated over hours.
    pub mortality: Vec<f64>,
    pub stay_ids: Vec<u64>,
}

impl Batch {
    pub fn new(stays: &[&StayRecord], horizon: usize, start_hour: usize) -> Result<Batch> {
        let input = ModelInput::from_stays(stays, horizon)?;
        let t_n = input.hours();
        let n = stays.len() * t_n;
        let mut labels = vec![1.0; n];
        let mut loss_mask = vec![0.0; n];
        let mut mortality = vec![0.0; n];
        for (b, s) in stays.iter().enumerate() {
            let used = s.hours().min(t_n);
            let row = b * t_n;
            labels[row..row + used].copy_from_slice(&s.los_labels[..used]);
            for hour in start_hour.max(1)..=used {
                loss_mask[row + hour - 1] = 1.0;
            }
            mortality[row..row + t_n].fill(f64::from(u8::from(s.mortality)));
        }
        Ok(Batch {
            input,
            labels,
            loss_mask,
            mortality,
            stay_ids: stays.iter().map(|s| s.stay_id).collect(),
        })
    }

    /// Number of points that enter the loss.
    pub fn points(&self) -> usize {
        self.loss_mask.iter().filter(|m| **m != 0.0).count()
    }

    /// Stays with at least one loss point.
    pub fn scored_stays(&self) -> usize {
        let t_n = self.input.hours();
        (0..self.stay_ids.len())
            .filter(|b| self.loss_mask[b * t_n..(b + 1) * t_n].iter().any(|m| *m != 0.0))
            .count()
    }

    /// Rewrites the loss mask for `averaging`.
    pub fn with_averaging(mut self, averaging: LossAveraging) -> Batch {
        if averaging == LossAveraging::Stays {
            let t_n = self.input.hours();
            for row in self.loss_mask.chunks_mut(t_n.max(1)) {
                let n = row.iter().filter(|m| **m != 0.0).count();
                row.iter_mut().filter(|m| **m != 0.0).for_each(|m| *m = 1.0 / n as f64);
            }
        }
        self
    }

    /// Weight of this batch's mean loss when pooling batches.
    pub fn weight(&self, averaging: LossAveraging) -> usize {
        match averaging {
            LossAveraging::Points => self.points(),
            LossAveraging::Stays => self.scored_stays(),
        }
    }
}

/// Shuffles `stays` with `rng` and groups them into padded batches. Every
/// stay appears in exactly one batch.
pub fn batch_stays(
    stays: &[&StayRecord],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
    horizon: usize,
    start_hour: usize,
) -> Result<Vec<Batch>> {
    let mut order: Vec<&StayRecord> = stays.to_vec();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::new(chunk, horizon, start_hour))
        .collect()
}
