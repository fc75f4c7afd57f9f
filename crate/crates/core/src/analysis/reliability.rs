use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::objectives::{kappa_bin, mape, PredictionSet, KAPPA_BINS, KAPPA_BIN_EDGES};

pub const DAY_BINS: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityCell {
    /// Day of stay, `ceil(hour / 24)`, 1-based.
    pub day_bin: usize,
    /// Predicted remaining stay bin, e.g. `8-14` or `14+`.
    pub los_bin: String,
    /// `None` for an empty cell.
    pub mape: Option<f64>,
    pub n: usize,
}

pub fn los_bin_label(bin: usize) -> String {
    let lo = if bin == 0 { 0.0 } else { KAPPA_BIN_EDGES[bin - 1] };
    match KAPPA_BIN_EDGES.get(bin) {
        Some(hi) => format!("{lo}-{hi}"),
        None => format!("{lo}+"),
    }
}

pub fn day_bin(hour: usize) -> usize {
    hour.div_ceil(24).clamp(1, DAY_BINS)
}

/// MAPE over masked points grouped by day of stay and predicted remaining
/// stay bin. All `14 x 10` cells are returned, row-major by day.
pub fn reliability_grid(set: &PredictionSet) -> Vec<ReliabilityCell> {
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); DAY_BINS * KAPPA_BINS];
    for i in 0..set.len() {
        if !set.mask[i] {
            continue;
        }
        let g = &mut groups[(day_bin(set.hour[i]) - 1) * KAPPA_BINS + kappa_bin(set.pred[i])];
        g.0.push(set.pred[i]);
        g.1.push(set.truth[i]);
    }
    groups
        .iter()
        .enumerate()
        .map(|(k, (p, y))| ReliabilityCell {
            day_bin: k / KAPPA_BINS + 1,
            los_bin: los_bin_label(k % KAPPA_BINS),
            mape: (!p.is_empty()).then(|| mape(p, y)),
            n: p.len(),
        })
        .collect()
}

pub fn write_reliability(path: &Path, cells: &[ReliabilityCell]) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
