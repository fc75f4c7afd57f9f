//! Hourly resampling, forward filling and decay indicators.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-hour multiplicative decay of the staleness indicator.
pub const DECAY_BASE: f64 = 0.75;
/// Earliest accepted pre-admission offset (24 hours).
pub const EARLIEST_OFFSET_MINUTES: f64 = -1440.0;

pub const TIME_IN_ICU: &str = "time_in_icu";
pub const TIME_OF_DAY: &str = "time_of_day";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub stay_id: u64,
    pub feature_name: String,
    /// Minutes from ICU admission; negative before admission.
    pub offset_minutes: f64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Continuous,
    Binary,
}

/// Laboratory tests versus everything else (vitals, nursing, machine logs).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Lab,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesFeature {
    pub name: String,
    pub kind: ValueKind,
    pub group: FeatureGroup,
}

/// Ordered set of time-series features accepted from raw event logs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    features: Vec<TimeSeriesFeature>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureRegistry {
    pub fn new(features: Vec<TimeSeriesFeature>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, f) in features.iter().enumerate() {
            if index.insert(f.name.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(FeatureRegistry { features, index })
    }

    pub fn features(&self) -> &[TimeSeriesFeature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }
}

/// Hour bucket of an event: `ceil(minutes / 60)`, so `((t-1)*60, t*60]` is
/// hour `t` and everything at or before admission is hour 0 or earlier.
pub fn hour_of(offset_minutes: f64) -> i64 {
    (offset_minutes / 60.0).ceil() as i64
}

/// Latest observed value per (feature, hour), plus the latest pre-admission
/// value per feature used only to seed forward filling.
#[derive(Clone, Debug, PartialEq)]
pub struct HourlyGrid {
    features: usize,
    hours: usize,
    cells: Vec<Option<f64>>,
    seed: Vec<Option<f64>>,
}

impl HourlyGrid {
    pub fn empty(features: usize, hours: usize) -> Self {
        HourlyGrid {
            features,
            hours,
            cells: vec![None; features * hours],
            seed: vec![None; features],
        }
    }

    /// Builds a grid where every cell is observed.
    pub fn from_dense(values: &Tensor) -> Self {
        let (f, t) = (values.shape()[0], values.shape()[1]);
        HourlyGrid {
            features: f,
            hours: t,
            cells: values.data().iter().map(|v| Some(*v)).collect(),
            seed: vec![None; f],
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn hours(&self) -> usize {
        self.hours
    }

    /// Value in hour `t` (1-based).
    pub fn cell(&self, feature: usize, hour: usize) -> Option<f64> {
        self.cells[feature * self.hours + hour - 1]
    }

    pub fn seed(&self, feature: usize) -> Option<f64> {
        self.seed[feature]
    }

    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> HourlyGrid {
        let hours = self.hours;
        HourlyGrid {
            features: self.features,
            hours,
            cells: self
                .cells
                .iter()
                .enumerate()
                .map(|(i, c)| c.map(|v| f(i / hours.max(1), v)))
                .collect(),
            seed: self
                .seed
                .iter()
                .enumerate()
                .map(|(i, c)| c.map(|v| f(i, v)))
                .collect(),
        }
    }
}

/// Buckets one stay's events into hours `1..=stay_length_hours`.
///
/// Events later in the slice win ties at equal offsets. Events after the stay
/// are ignored; events at or before admission seed the fill state.
pub fn resample_hourly(
    events: &[RawEvent],
    stay_length_hours: usize,
    registry: &FeatureRegistry,
) -> Result<HourlyGrid> {
    if stay_length_hours < 5 {
        return Err(Error::Dataset(format!(
            "stay length {stay_length_hours} h is below the 5 hour cohort minimum"
        )));
    }
    let mut grid = HourlyGrid::empty(registry.len(), stay_length_hours);
    let mut cell_offset = vec![f64::NEG_INFINITY; grid.cells.len()];
    let mut seed_offset = vec![f64::NEG_INFINITY; registry.len()];
    for e in events {
        let f = registry
            .position(&e.feature_name)
            .ok_or_else(|| Error::UnknownFeature(e.feature_name.clone()))?;
        if e.offset_minutes < EARLIEST_OFFSET_MINUTES {
            continue;
        }
        let h = hour_of(e.offset_minutes);
        if h <= 0 {
            if e.offset_minutes >= seed_offset[f] {
                seed_offset[f] = e.offset_minutes;
                grid.seed[f] = Some(e.value);
            }
        } else if (h as usize) <= stay_length_hours {
            let i = f * stay_length_hours + h as usize - 1;
            if e.offset_minutes >= cell_offset[i] {
                cell_offset[i] = e.offset_minutes;
                grid.cells[i] = Some(e.value);
            }
        }
    }
    Ok(grid)
}

/// Forward fills a grid and derives decay indicators.
///
/// Returns `(values, decay)`, both `[F, T]`. A feature never observed by hour
/// `t` takes `fill[f]` with decay 0; otherwise decay is `0.75^j` with `j` the
/// hours since the latest observation (pre-admission seeds count as hour 0).
pub fn forward_fill_with_decay(grid: &HourlyGrid, fill: &[f64]) -> Result<(Tensor, Tensor)> {
    if fill.len() != grid.features {
        return Err(Error::dim(format!(
            "{} fill values for {} features",
            fill.len(),
            grid.features
        )));
    }
    let (f_n, t_n) = (grid.features, grid.hours);
    let mut values = vec![0.0; f_n * t_n];
    let mut decay = vec![0.0; f_n * t_n];
    for f in 0..f_n {
        let mut last: Option<(f64, usize)> = grid.seed[f].map(|v| (v, 0));
        for t in 1..=t_n {
            if let Some(v) = grid.cell(f, t) {
                last = Some((v, t));
            }
            let i = f * t_n + t - 1;
            match last {
                Some((v, at)) => {
                    values[i] = v;
                    decay[i] = DECAY_BASE.powi((t - at) as i32);
                }
                None => {
                    values[i] = fill[f];
                    decay[i] = 0.0;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![f_n, t_n], values)?,
        Tensor::new(vec![f_n, t_n], decay)?,
    ))
}

/// Raw (unscaled) clock values for hour `t` (1-based).
pub fn clock_values(admission_hour: u32, t: usize) -> (f64, f64) {
    (t as f64, ((admission_hour as usize + t) % 24) as f64)
}

/// Appends time-in-ICU and time-of-day rows (always observed, decay 1).
/// `scale` maps (row index 0 or 1, raw value) to the model's input scale.
pub fn append_clock_features(
    values: &Tensor,
    decay: &Tensor,
    admission_hour: u32,
    scale: impl Fn(usize, f64) -> f64,
) -> Result<(Tensor, Tensor)> {
    let (f_n, t_n) = (values.shape()[0], values.shape()[1]);
    if decay.shape() != values.shape() {
        return Err(Error::dim("values and decay shapes differ"));
    }
    let mut v = values.data().to_vec();
    let mut d = decay.data().to_vec();
    let (icu, tod): (Vec<f64>, Vec<f64>) = (1..=t_n)
        .map(|t| {
            let (a, b) = clock_values(admission_hour, t);
            (scale(0, a), scale(1, b))
        })
        .unzip();
    v.extend(icu);
    v.extend(tod);
    d.extend(std::iter::repeat_n(1.0, 2 * t_n));
    Ok((
        Tensor::new(vec![f_n + 2, t_n], v)?,
        Tensor::new(vec![f_n + 2, t_n], d)?,
    ))
}
