use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Divisor floor for MAPE, in days (4 hours).
pub const MAPE_FLOOR_DAYS: f64 = 4.0 / 24.0;
/// Upper edges (exclusive) of the kappa bins in days; the last bin is open.
pub const KAPPA_BIN_EDGES: [f64; 9] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 14.0];
pub const KAPPA_BINS: usize = KAPPA_BIN_EDGES.len() + 1;
/// Hour at which mortality is scored.
pub const MORTALITY_HOUR: usize = 24;

/// Pooled (stay, hour) predictions. Only points with `mask` set enter the
/// LoS metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    pub mask: Vec<bool>,
    pub mortality_prob: Vec<f64>,
    pub mortality_label: Vec<f64>,
    /// 1-based hour.
    pub hour: Vec<usize>,
    pub stay_id: Vec<u64>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }

    pub fn extend(&mut self, other: PredictionSet) {
        self.pred.extend(other.pred);
        self.truth.extend(other.truth);
        self.mask.extend(other.mask);
        self.mortality_prob.extend(other.mortality_prob);
        self.mortality_label.extend(other.mortality_label);
        self.hour.extend(other.hour);
        self.stay_id.extend(other.stay_id);
    }

    /// `(pred, truth)` over masked points.
    pub fn masked(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.len())
            .filter(|&i| self.mask[i])
            .map(|i| (self.pred[i], self.truth[i]))
            .unzip()
    }

    /// `(prob, label)` at hour 24, one per stay that reaches it.
    pub fn mortality_at_24h(&self) -> (Vec<f64>, Vec<f64>) {
        if self.mortality_prob.len() != self.len() {
            return (Vec::new(), Vec::new());
        }
        (0..self.len())
            .filter(|&i| self.hour[i] == MORTALITY_HOUR)
            .map(|i| (self.mortality_prob[i], self.mortality_label[i]))
            .unzip()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mad: f64,
    pub mape: f64,
    pub mse: f64,
    pub msle: f64,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
    /// `None` when both vectors fall in a single bin.
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub los: Option<RegressionMetrics>,
    pub mortality: Option<ClassificationMetrics>,
    pub n_points: usize,
    pub n_stays: usize,
    pub n_mortality: usize,
}

pub fn mape(pred: &[f64], truth: &[f64]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, y)| (y - p).abs() / y.max(MAPE_FLOOR_DAYS))
        .sum();
    100.0 * s / pred.len() as f64
}

/// Kappa bin of a duration in days.
pub fn kappa_bin(days: f64) -> usize {
    KAPPA_BIN_EDGES.iter().position(|e| days < *e).unwrap_or(KAPPA_BINS - 1)
}

/// Linear-weighted Cohen's kappa over the fixed LoS bins, computed as
/// `1 - sum(w O) / sum(w E)` with disagreement weights `|i - j| / (K - 1)`.
/// Counts stay integral so agreement and chance cancel exactly.
pub fn linear_kappa(a: &[f64], b: &[f64]) -> Option<f64> {
    let k = KAPPA_BINS;
    let n = a.len() as u128;
    let mut rows = vec![0u128; k];
    let mut cols = vec![0u128; k];
    let mut num = 0u128;
    for (x, y) in a.iter().zip(b) {
        let (i, j) = (kappa_bin(*x), kappa_bin(*y));
        num += i.abs_diff(j) as u128;
        rows[i] += 1;
        cols[j] += 1;
    }
    let mut den = 0u128;
    for i in 0..k {
        for j in 0..k {
            den += i.abs_diff(j) as u128 * rows[i] * cols[j];
        }
    }
    (den > 0).then(|| 1.0 - (n * num) as f64 / den as f64)
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::dim("prediction and truth lengths differ"));
    }
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("no evaluation points".into()));
    }
    let n = pred.len() as f64;
    let mean = |f: &dyn Fn(f64, f64) -> f64| pred.iter().zip(truth).map(|(p, y)| f(*p, *y)).sum::<f64>() / n;
    let mad = mean(&|p, y| (y - p).abs());
    let mse = mean(&|p, y| (y - p).powi(2));
    let msle = mean(&|p, y| (p.ln() - y.ln()).powi(2));
    let y_mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, y)| (y - p).powi(2)).sum();
    Ok(RegressionMetrics {
        mad,
        mape: mape(pred, truth),
        mse,
        msle,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        kappa: linear_kappa(pred, truth),
    })
}

/// Ranks (1-based) with ties given their average rank.
fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve from the rank-sum statistic; `None` for a
/// single class.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let n1 = labels.iter().filter(|l| **l == 1.0).count() as f64;
    let n0 = labels.len() as f64 - n1;
    if n1 == 0.0 || n0 == 0.0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let pos_rank: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l == 1.0).map(|(r, _)| r).sum();
    Some((pos_rank - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over descending score
/// thresholds, tied scores forming one threshold.
pub fn auprc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let total_pos = labels.iter().filter(|l| **l == 1.0).count() as f64;
    if total_pos == 0.0 || total_pos == labels.len() as f64 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1.0 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Some(ap)
}

pub fn classification_metrics(scores: &[f64], labels: &[f64]) -> ClassificationMetrics {
    ClassificationMetrics {
        auroc: auroc(scores, labels),
        auprc: auprc(scores, labels),
    }
}

/// LoS metrics over masked points; mortality metrics at hour 24 when
/// probabilities are present.
pub fn evaluate_predictions(set: &PredictionSet) -> Result<MetricsReport> {
    let (pred, truth) = set.masked();
    let los = if pred.is_empty() {
        None
    } else {
        Some(regression_metrics(&pred, &truth)?)
    };
    let (prob, label) = set.mortality_at_24h();
    let mut stays = set.stay_id.clone();
    stays.sort_unstable();
    stays.dedup();
    Ok(MetricsReport {
        los,
        mortality: (!prob.is_empty()).then(|| classification_metrics(&prob, &label)),
        n_points: pred.len(),
        n_stays: stays.len(),
        n_mortality: prob.len(),
    })
}
