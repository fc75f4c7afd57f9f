//! Robust percentile scaling to `[-1, 1]` with hard cut-offs at `[-4, 4]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::events::ValueKind;

pub const SCALE_CUTOFF: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub kind: ValueKind,
    pub p5: f64,
    pub p95: f64,
    /// Mean of the raw observed training values.
    pub mean: f64,
    pub degenerate: bool,
}

impl FeatureScale {
    /// Fits on raw observed values; `None` when there are none.
    pub fn fit(values: &[f64], kind: ValueKind) -> Option<FeatureScale> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let p5 = percentile(&sorted, 0.05);
        let p95 = percentile(&sorted, 0.95);
        Some(FeatureScale {
            kind,
            p5,
            p95,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            degenerate: p95 == p5,
        })
    }

    pub fn scale(&self, v: f64) -> f64 {
        scale_value(v, self)
    }

    /// Encoded value of the training mean (the fill for unobserved features).
    pub fn scaled_mean(&self) -> f64 {
        self.scale(self.mean)
    }
}

/// Linear interpolation between order statistics at position `q * (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn scale_value(v: f64, spec: &FeatureScale) -> f64 {
    match spec.kind {
        ValueKind::Binary => v,
        ValueKind::Continuous if spec.degenerate => 0.0,
        ValueKind::Continuous => {
            (2.0 * (v - spec.p5) / (spec.p95 - spec.p5) - 1.0).clamp(-SCALE_CUTOFF, SCALE_CUTOFF)
        }
    }
}

/// Per-feature scales fitted on the training split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub features: BTreeMap<String, FeatureScale>,
    /// Features with no training observations.
    pub dropped: Vec<String>,
}

impl ScalingSpec {
    pub fn get(&self, name: &str) -> Option<&FeatureScale> {
        self.features.get(name)
    }
}

/// Fits one scale per named column of raw training observations.
pub fn fit_scaling<'a, I>(columns: I) -> ScalingSpec
where
    I: IntoIterator<Item = (&'a str, ValueKind, &'a [f64])>,
{
    let mut spec = ScalingSpec::default();
    for (name, kind, values) in columns {
        match FeatureScale::fit(values, kind) {
            Some(s) => {
                if s.degenerate {
                    log::warn!("feature `{name}` has p5 == p95; it will scale to 0");
                }
                spec.features.insert(name.to_string(), s);
            }
            None => {
                log::warn!("feature `{name}` has no training observations; dropped");
                spec.dropped.push(name.to_string());
            }
        }
    }
    spec
}
