//! Per-stay records, remaining-LoS labels and patient-level splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Training horizon in hours; longer stays are truncated.
pub const HORIZON_HOURS: usize = 336;
/// Labels and metrics start at this hour.
pub const FIRST_LABELLED_HOUR: usize = 5;
/// Smallest representable remaining stay (30 minutes, in days).
pub const MIN_LOS_DAYS: f64 = 1.0 / 48.0;
pub const MAX_LOS_DAYS: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StayRecord {
    pub stay_id: u64,
    pub patient_id: u64,
    /// Scaled, forward-filled values `[F, T]`.
    pub values: Tensor,
    /// Decay indicators `[F, T]`.
    pub decay: Tensor,
    pub statics: Vec<f64>,
    pub diagnoses: Vec<f64>,
    /// Remaining stay in days for hours `1..=T`.
    pub los_labels: Vec<f64>,
    pub mortality: bool,
}

impl StayRecord {
    pub fn hours(&self) -> usize {
        self.los_labels.len()
    }

    pub fn features(&self) -> usize {
        self.values.shape()[0]
    }

    /// Keeps the first `horizon` hours. Labels are left as computed from the
    /// true discharge time.
    pub fn truncate(&mut self, horizon: usize) {
        let t = self.hours();
        if t <= horizon {
            return;
        }
        let f = self.features();
        let cut = |x: &Tensor| {
            let data = (0..f)
                .flat_map(|i| x.data()[i * t..i * t + horizon].iter().copied())
                .collect();
            Tensor::new(vec![f, horizon], data).expect("consistent shape")
        };
        self.values = cut(&self.values);
        self.decay = cut(&self.decay);
        self.los_labels.truncate(horizon);
    }
}

/// Number of hourly steps for a stay of `length_hours`.
pub fn stay_hours(length_hours: f64) -> usize {
    length_hours.ceil() as usize
}

/// Remaining stay in days at the end of each hour `1..=ceil(L)`, clamped
/// below at half an hour.
pub fn remaining_los_labels(length_hours: f64) -> Vec<f64> {
    (1..=stay_hours(length_hours))
        .map(|t| ((length_hours - t as f64) / 24.0).max(MIN_LOS_DAYS))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Split(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: BTreeSet<u64>,
    pub val: BTreeSet<u64>,
    pub test: BTreeSet<u64>,
}

impl CohortSplit {
    pub fn get(&self, split: Split) -> &BTreeSet<u64> {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn which(&self, id: u64) -> Option<Split> {
        Split::ALL.into_iter().find(|s| self.get(*s).contains(&id))
    }
}

/// Splits patient ids into train/val/test by shuffling with `seed`.
///
/// Counts are `round(r_train * n)` and `round(r_val * n)` with the remainder
/// going to test; each split keeps at least one patient.
pub fn split_cohort(patient_ids: &[u64], ratios: [f64; 3], seed: u64) -> Result<CohortSplit> {
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut ids: Vec<u64> = patient_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n = ids.len();
    if n < 3 {
        return Err(Error::Split(format!("{n} patients cannot fill 3 splits")));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut n_train = ((ratios[0] * n as f64).round() as usize).max(1);
    let n_val = ((ratios[1] * n as f64).round() as usize).max(1);
    if n_train + n_val > n - 1 {
        n_train = n - 1 - n_val;
    }
    Ok(CohortSplit {
        train: ids[..n_train].iter().copied().collect(),
        val: ids[n_train..n_train + n_val].iter().copied().collect(),
        test: ids[n_train + n_val..].iter().copied().collect(),
    })
}
