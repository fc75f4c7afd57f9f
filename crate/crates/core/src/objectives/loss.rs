use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Msle,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msle" => Ok(LossKind::Msle),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::config(format!("unknown loss `{s}` (expected msle or mse)"))),
        }
    }
}

fn check_lengths(g: &Graph, pred: Var, target: &[f64], mask: &[f64]) -> Result<()> {
    let n = g.value(pred).len();
    if target.len() != n || mask.len() != n {
        return Err(Error::dim(format!(
            "loss over {n} predictions with {} targets and {} mask entries",
            target.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// Targets with unmasked cells replaced by `fill`, so padding cannot produce
/// non-finite intermediates.
fn masked_targets(target: &[f64], mask: &[f64], fill: f64) -> Vec<f64> {
    target.iter().zip(mask).map(|(y, m)| if *m != 0.0 { *y } else { fill }).collect()
}

/// Mean over masked points of `ln(pred / target)^2`. Taking the log of the
/// ratio keeps over- and under-prediction by the same factor bitwise equal.
pub fn msle_loss(g: &mut Graph, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
    check_lengths(g, pred, target, mask)?;
    if let Some(i) = (0..target.len()).find(|&i| mask[i] != 0.0 && (target[i] <= 0.0 || g.value(pred).data()[i] <= 0.0)) {
        return Err(Error::Domain(format!(
            "msle needs positive values; point {i} has prediction {} and target {}",
            g.value(pred).data()[i],
            target[i]
        )));
    }
    let ratio = g.div_const(pred, masked_targets(target, mask, 1.0))?;
    let log_ratio = g.log(ratio)?;
    let sq = g.square(log_ratio);
    g.masked_mean(sq, mask)
}

/// Mean over masked points of `(pred - target)^2`.
pub fn mse_loss(g: &mut Graph, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
    check_lengths(g, pred, target, mask)?;
    let t = g.constant(Tensor::new(g.shape(pred).to_vec(), masked_targets(target, mask, 0.0))?);
    let diff = g.sub(pred, t)?;
    let sq = g.square(diff);
    g.masked_mean(sq, mask)
}

pub fn los_loss(g: &mut Graph, kind: LossKind, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
    match kind {
        LossKind::Msle => msle_loss(g, pred, target, mask),
        LossKind::Mse => mse_loss(g, pred, target, mask),
    }
}

/// Masked mean binary cross-entropy; `labels` is the stay label repeated
/// over every hour.
pub fn mortality_loss(g: &mut Graph, prob: Var, labels: &[f64], mask: &[f64]) -> Result<Var> {
    check_lengths(g, prob, labels, mask)?;
    let bce = g.binary_cross_entropy(prob, labels)?;
    g.masked_mean(bce, mask)
}

/// `los + alpha * mortality`. With `alpha == 0` (or no mortality term) the
/// result is the LoS loss node itself.
pub fn multitask_loss(g: &mut Graph, los: Var, mortality: Option<Var>, alpha: f64) -> Result<Var> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::config(format!("alpha must be finite and non-negative, got {alpha}")));
    }
    match mortality {
        Some(m) if alpha > 0.0 => {
            let weighted = g.scale(m, alpha);
            g.add(los, weighted)
        }
        _ => Ok(los),
    }
}
