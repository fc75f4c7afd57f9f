use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::ehr::StayRecord;
use crate::error::{Error, Result};
use crate::model::{ForwardCtx, ModelInput, TpcModel};

pub const DEFAULT_IG_STEPS: usize = 256;
pub const ATTRIBUTION_HOUR: usize = 24;

/// Midpoint-rule integrated gradients of a scalar function from `baseline`
/// to `x`. `grad_batch` receives interpolation points and returns the
/// gradient at each.
pub fn integrated_gradients<G>(x: &[f64], baseline: &[f64], steps: usize, chunk: usize, mut grad_batch: G) -> Result<Vec<f64>>
where
    G: FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
{
    if x.len() != baseline.len() {
        return Err(Error::dim("input and baseline lengths differ"));
    }
    if steps == 0 {
        return Err(Error::config("integrated gradients needs at least one step"));
    }
    let mut total = vec![0.0; x.len()];
    let alphas: Vec<f64> = (1..=steps).map(|l| (l as f64 - 0.5) / steps as f64).collect();
    for block in alphas.chunks(chunk.max(1)) {
        let points: Vec<Vec<f64>> = block
            .iter()
            .map(|a| baseline.iter().zip(x).map(|(b, xi)| b + a * (xi - b)).collect())
            .collect();
        let grads = grad_batch(&points)?;
        if grads.len() != points.len() {
            return Err(Error::dim("gradient batch has the wrong length"));
        }
        for g in grads {
            for (t, gi) in total.iter_mut().zip(g) {
                *t += gi;
            }
        }
    }
    Ok(total
        .iter()
        .zip(x.iter().zip(baseline))
        .map(|(g, (xi, b))| (xi - b) * g / steps as f64)
        .collect())
}

/// Attributions for one stay's time series at the target hour.
#[derive(Clone, Debug, PartialEq)]
pub struct StayAttribution {
    pub stay_id: u64,
    /// `[F, hour]`
    pub values: Tensor,
    /// `[F, hour]`
    pub decay: Tensor,
    /// Prediction at the target hour for the stay and for the baseline.
    pub prediction: f64,
    pub baseline_prediction: f64,
}

impl StayAttribution {
    /// Value plus decay attribution per (feature, hour).
    pub fn combined(&self) -> Vec<f64> {
        self.values.data().iter().zip(self.decay.data()).map(|(a, b)| a + b).collect()
    }

    pub fn total(&self) -> f64 {
        self.values.sum() + self.decay.sum()
    }

    /// `|sum phi - (psi(x) - psi(b))| / |psi(x) - psi(b)|`.
    pub fn completeness_error(&self) -> f64 {
        let diff = self.prediction - self.baseline_prediction;
        (self.total() - diff).abs() / diff.abs()
    }
}

/// Baseline time series: `fill` (scaled training means) with decay 1.
pub fn mean_baseline(fill: &[f64], hours: usize) -> (Vec<f64>, Vec<f64>) {
    let values = fill.iter().flat_map(|v| std::iter::repeat_n(*v, hours)).collect();
    (values, vec![1.0; fill.len() * hours])
}

/// Model predictions at `hour` for a batch of `(values, decay)` points of
/// one stay, optionally with input gradients.
fn model_at_hour(
    model: &TpcModel,
    stay: &StayRecord,
    points: &[Vec<f64>],
    hour: usize,
    with_grad: bool,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let f_n = stay.features();
    let m = points.len();
    let cell = f_n * hour;
    let mut values = Vec::with_capacity(m * cell);
    let mut decay = Vec::with_capacity(m * cell);
    for p in points {
        values.extend_from_slice(&p[..cell]);
        decay.extend_from_slice(&p[cell..]);
    }
    let input = ModelInput {
        values: Tensor::new(vec![m, f_n, hour], values)?,
        decay: Tensor::new(vec![m, f_n, hour], decay)?,
        statics: Tensor::new(vec![m, stay.statics.len()], stay.statics.repeat(m))?,
        diagnoses: Tensor::new(vec![m, stay.diagnoses.len()], stay.diagnoses.repeat(m))?,
        mask: vec![1.0; m * hour],
    };
    let mut g = Graph::new();
    let vars = model.param_constants(&mut g);
    let iv = input.leaves(&mut g, with_grad);
    let mut ctx = ForwardCtx::eval(&input.mask);
    let out = model.forward(&mut g, &vars, iv, &mut ctx)?;
    let at = g.slice(out.los, 1, hour - 1, 1)?;
    let preds = g.value(at).data().to_vec();
    if !with_grad {
        return Ok((preds, Vec::new()));
    }
    // Stays are independent in eval mode, so the gradient of the sum
    // holds each point's own gradient.
    let total = g.sum(at);
    g.backward(total)?;
    let gv = g.grad(iv.values).ok_or_else(|| Error::Contract("no gradient for values".into()))?;
    let gd = g.grad(iv.decay).ok_or_else(|| Error::Contract("no gradient for decay".into()))?;
    let grads = (0..m)
        .map(|i| {
            let mut v = gv.data()[i * cell..(i + 1) * cell].to_vec();
            v.extend_from_slice(&gd.data()[i * cell..(i + 1) * cell]);
            v
        })
        .collect();
    Ok((preds, grads))
}

/// Integrated gradients of the remaining-stay prediction at `hour` with
/// respect to the stay's values and decay, statics and diagnoses held
/// fixed. Only the first `hour` hours are fed to the model, which is exact
/// because the model is causal. Returns `None` for stays shorter than
/// `hour`.
pub fn attribute_stay(
    model: &TpcModel,
    stay: &StayRecord,
    fill: &[f64],
    steps: usize,
    hour: usize,
) -> Result<Option<StayAttribution>> {
    if hour == 0 || stay.hours() < hour {
        return Ok(None);
    }
    let f_n = stay.features();
    if fill.len() != f_n {
        return Err(Error::dim(format!("{} fill values for {f_n} features", fill.len())));
    }
    let t = stay.hours();
    let mut x: Vec<f64> = (0..f_n).flat_map(|f| stay.values.data()[f * t..f * t + hour].to_vec()).collect();
    x.extend((0..f_n).flat_map(|f| stay.decay.data()[f * t..f * t + hour].to_vec()));
    let (bv, bd) = mean_baseline(fill, hour);
    let baseline: Vec<f64> = bv.into_iter().chain(bd).collect();

    let phi = integrated_gradients(&x, &baseline, steps, 64, |pts| Ok(model_at_hour(model, stay, pts, hour, true)?.1))?;
    let (ends, _) = model_at_hour(model, stay, &[x.clone(), baseline.clone()], hour, false)?;
    let cell = f_n * hour;
    Ok(Some(StayAttribution {
        stay_id: stay.stay_id,
        values: Tensor::new(vec![f_n, hour], phi[..cell].to_vec())?,
        decay: Tensor::new(vec![f_n, hour], phi[cell..].to_vec())?,
        prediction: ends[0],
        baseline_prediction: ends[1],
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub feature: String,
    pub mean_abs_attribution: f64,
    /// 1 is the most important.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    /// Sorted by rank.
    pub features: Vec<FeatureAttribution>,
    pub n_stays: usize,
}

impl AttributionResult {
    pub fn top(&self, k: usize) -> Vec<&str> {
        self.features.iter().take(k).map(|f| f.feature.as_str()).collect()
    }
}

/// `|phi|` averaged over hours, then over stays, then ranked (ties by
/// feature order).
pub fn aggregate_attributions(names: &[String], stays: &[StayAttribution]) -> Result<AttributionResult> {
    if stays.is_empty() {
        return Err(Error::Dataset("no stays to aggregate attributions over".into()));
    }
    let f_n = names.len();
    let mut score = vec![0.0; f_n];
    for s in stays {
        if s.values.shape()[0] != f_n {
            return Err(Error::dim(format!("attribution for stay {} has the wrong feature count", s.stay_id)));
        }
        let hours = s.values.shape()[1];
        let phi = s.combined();
        for f in 0..f_n {
            score[f] += phi[f * hours..(f + 1) * hours].iter().map(|v| v.abs()).sum::<f64>() / hours as f64;
        }
    }
    let mut order: Vec<usize> = (0..f_n).collect();
    order.sort_by(|a, b| score[*b].total_cmp(&score[*a]).then(a.cmp(b)));
    let n = stays.len() as f64;
    Ok(AttributionResult {
        features: order
            .iter()
            .enumerate()
            .map(|(r, &f)| FeatureAttribution {
                feature: names[f].clone(),
                mean_abs_attribution: score[f] / n,
                rank: r + 1,
            })
            .collect(),
        n_stays: stays.len(),
    })
}

/// Attributes every stay that reaches `hour` (in parallel, results in
/// input order).
pub fn attribute_cohort(
    model: &TpcModel,
    stays: &[&StayRecord],
    fill: &[f64],
    steps: usize,
    hour: usize,
) -> Result<Vec<StayAttribution>> {
    let results: Vec<Result<Option<StayAttribution>>> = stays
        .par_iter()
        .map(|s| attribute_stay(model, s, fill, steps, hour))
        .collect();
    let mut out = Vec::new();
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_attributions(path: &Path, result: &AttributionResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in &result.features {
        w.serialize(f)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn linear_stub_is_exact(
            w in proptest::collection::vec(-3.0f64..3.0, 1..12),
            steps in 1usize..40,
            seed in 0u64..1000,
        ) {
            let n = w.len();
            let x: Vec<f64> = (0..n).map(|i| ((seed + i as u64) % 7) as f64 - 3.0).collect();
            let b: Vec<f64> = (0..n).map(|i| (i as f64) * 0.3).collect();
            let phi = integrated_gradients(&x, &b, steps, 5, |pts| Ok(vec![w.clone(); pts.len()])).unwrap();
            for i in 0..n {
                prop_assert!((phi[i] - w[i] * (x[i] - b[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quadratic_completeness_and_zero_path() {
        // psi = sum x_i^2 has gradient 2x; midpoint rule is exact for linear gradients
        let x = [1.0, -2.0, 0.5];
        let b = [0.2, 0.1, 0.0];
        let grad = |pts: &[Vec<f64>]| Ok(pts.iter().map(|p| p.iter().map(|v| 2.0 * v).collect()).collect());
        let phi = integrated_gradients(&x, &b, 3, 2, grad).unwrap();
        let diff: f64 = x.iter().map(|v| v * v).sum::<f64>() - b.iter().map(|v| v * v).sum::<f64>();
        assert!((phi.iter().sum::<f64>() - diff).abs() < 1e-12);
        let same = integrated_gradients(&x, &x, 8, 3, grad).unwrap();
        assert!(same.iter().all(|v| *v == 0.0));
    }

    fn attribution(id: u64, rows: &[&[f64]]) -> StayAttribution {
        let hours = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.to_vec()).collect();
        StayAttribution {
            stay_id: id,
            values: Tensor::new(vec![rows.len(), hours], data).unwrap(),
            decay: Tensor::zeros(&[rows.len(), hours]),
            prediction: 0.0,
            baseline_prediction: 0.0,
        }
    }

    #[test]
    fn aggregation_ranks_by_mean_absolute_value() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let one = aggregate_attributions(&names, &[attribution(1, &[&[0.1], &[-0.5], &[0.3]])]).unwrap();
        assert_eq!(one.top(3), ["b", "c", "a"]);
        let stays = [
            attribution(1, &[&[1.0, -1.0], &[0.0, 0.2], &[0.5, 0.5]]),
            attribution(2, &[&[0.0, 0.0], &[3.0, 3.0], &[0.1, -0.1]]),
        ];
        let r = aggregate_attributions(&names, &stays).unwrap();
        assert_eq!(r.top(3), ["b", "a", "c"]);
        assert!((r.features[0].mean_abs_attribution - 1.55).abs() < 1e-12);
        let rev = aggregate_attributions(&names, &[stays[1].clone(), stays[0].clone()]).unwrap();
        assert_eq!(r, rev);
    }
}
