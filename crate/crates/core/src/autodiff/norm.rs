use serde::{Deserialize, Serialize};

/// Variance floor added before the square root.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the newest batch in the running averages.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub updates: u64,
}

impl NormState {
    pub fn new(channels: usize) -> Self {
        NormState {
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn update(&mut self, stats: &BatchStats) {
        for c in 0..self.channels() {
            self.running_mean[c] =
                (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * stats.mean[c];
            self.running_var[c] =
                (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * stats.unbiased_var[c];
        }
        self.updates += 1;
    }
}

/// Per-channel statistics of one training-mode batch-norm evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub unbiased_var: Vec<f64>,
    pub count: usize,
}

pub(crate) struct NormForward {
    pub out: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub stats: Option<BatchStats>,
}

/// Input layout `[lead, C, T]`; `mask` is `[lead, T]` with 1 on valid positions.
pub(crate) fn norm_forward(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mask: &[f64],
    (lead, ch, time): (usize, usize, usize),
    running: Option<&NormState>,
) -> NormForward {
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    let count: f64 = mask.iter().sum();
    match running {
        Some(state) => {
            mean.copy_from_slice(&state.running_mean);
            var.copy_from_slice(&state.running_var);
        }
        None => {
            for c in 0..ch {
                let mut s = 0.0;
                for b in 0..lead {
                    let row = &x[(b * ch + c) * time..(b * ch + c + 1) * time];
                    let m = &mask[b * time..(b + 1) * time];
                    for (v, w) in row.iter().zip(m) {
                        if *w > 0.0 {
                            s += v;
                        }
                    }
                }
                mean[c] = s / count;
                let mut ss = 0.0;
                for b in 0..lead {
                    let row = &x[(b * ch + c) * time..(b * ch + c + 1) * time];
                    let m = &mask[b * time..(b + 1) * time];
                    for (v, w) in row.iter().zip(m) {
                        if *w > 0.0 {
                            ss += (v - mean[c]) * (v - mean[c]);
                        }
                    }
                }
                var[c] = ss / count;
            }
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for b in 0..lead {
        for c in 0..ch {
            let base = (b * ch + c) * time;
            for t in 0..time {
                let xh = (x[base + t] - mean[c]) * inv_std[c];
                xhat[base + t] = xh;
                out[base + t] = xh * gamma[c] + beta[c];
            }
        }
    }
    let stats = running.is_none().then(|| BatchStats {
        unbiased_var: var
            .iter()
            .map(|v| if count > 1.0 { v * count / (count - 1.0) } else { *v })
            .collect(),
        mean,
        count: count as usize,
    });
    NormForward {
        out,
        xhat,
        inv_std,
        stats,
    }
}

/// Returns (dx, dgamma, dbeta). In eval mode the statistics are constants.
#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_backward(
    grad_out: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    mask: &[f64],
    (lead, ch, time): (usize, usize, usize),
    train: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let count: f64 = mask.iter().sum();
    let mut dx = vec![0.0; grad_out.len()];
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for c in 0..ch {
        let (mut sg, mut sgx) = (0.0, 0.0);
        for b in 0..lead {
            let base = (b * ch + c) * time;
            for t in 0..time {
                sg += grad_out[base + t];
                sgx += grad_out[base + t] * xhat[base + t];
            }
        }
        dgamma[c] = sgx;
        dbeta[c] = sg;
        let scale = gamma[c] * inv_std[c];
        for b in 0..lead {
            let base = (b * ch + c) * time;
            for t in 0..time {
                let g = grad_out[base + t];
                dx[base + t] = if train && mask[b * time + t] > 0.0 {
                    scale * (g - (sg + xhat[base + t] * sgx) / count)
                } else {
                    scale * g
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
