use crate::autodiff::{Graph, Tensor, Var};
use crate::ehr::StayRecord;
use crate::error::{Error, Result};

/// A zero-padded batch of stays.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[B, F, T]`
    pub values: Tensor,
    /// `[B, F, T]`
    pub decay: Tensor,
    /// `[B, S]`
    pub statics: Tensor,
    /// `[B, D]`
    pub diagnoses: Tensor,
    /// `[B * T]`, 1 where the hour exists.
    pub mask: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct InputVars {
    pub values: Var,
    pub decay: Var,
    pub statics: Var,
    pub diagnoses: Var,
}

impl ModelInput {
    /// Pads `stays` to the longest one (at most `horizon` hours).
    pub fn from_stays(stays: &[&StayRecord], horizon: usize) -> Result<ModelInput> {
        let first = stays.first().ok_or_else(|| Error::Dataset("empty batch".into()))?;
        let (f_n, s_n, d_n) = (first.features(), first.statics.len(), first.diagnoses.len());
        let t_n = stays.iter().map(|s| s.hours().min(horizon)).max().unwrap_or(0);
        let b_n = stays.len();
        let mut values = vec![0.0; b_n * f_n * t_n];
        let mut decay = vec![0.0; b_n * f_n * t_n];
        let mut mask = vec![0.0; b_n * t_n];
        let mut statics = Vec::with_capacity(b_n * s_n);
        let mut diagnoses = Vec::with_capacity(b_n * d_n);
        for (b, s) in stays.iter().enumerate() {
            if s.features() != f_n || s.statics.len() != s_n || s.diagnoses.len() != d_n {
                return Err(Error::Wiring(format!("stay {} has inconsistent widths", s.stay_id)));
            }
            let len = s.hours();
            let used = len.min(horizon);
            for f in 0..f_n {
                let dst = (b * f_n + f) * t_n;
                values[dst..dst + used].copy_from_slice(&s.values.data()[f * len..f * len + used]);
                decay[dst..dst + used].copy_from_slice(&s.decay.data()[f * len..f * len + used]);
            }
            mask[b * t_n..b * t_n + used].fill(1.0);
            statics.extend_from_slice(&s.statics);
            diagnoses.extend_from_slice(&s.diagnoses);
        }
        Ok(ModelInput {
            values: Tensor::new(vec![b_n, f_n, t_n], values)?,
            decay: Tensor::new(vec![b_n, f_n, t_n], decay)?,
            statics: Tensor::new(vec![b_n, s_n], statics)?,
            diagnoses: Tensor::new(vec![b_n, d_n], diagnoses)?,
            mask,
        })
    }

    pub fn batch(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn hours(&self) -> usize {
        self.values.shape()[2]
    }

    /// Inputs as constants (no gradients).
    pub fn constants(&self, g: &mut Graph) -> InputVars {
        self.leaves(g, false)
    }

    /// Inputs as leaves; with `requires_grad` the time series values and
    /// decay receive gradients.
    pub fn leaves(&self, g: &mut Graph, requires_grad: bool) -> InputVars {
        InputVars {
            values: g.leaf(self.values.clone(), requires_grad),
            decay: g.leaf(self.decay.clone(), requires_grad),
            statics: g.constant(self.statics.clone()),
            diagnoses: g.constant(self.diagnoses.clone()),
        }
    }
}
