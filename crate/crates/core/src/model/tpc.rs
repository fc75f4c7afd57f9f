use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{LayerLedger, Ledger, ModelConfig, Variant};
use super::input::InputVars;
use super::params::{init_parameters, Layout, Param};
use crate::autodiff::{BatchStats, Graph, Mode, NormState, Tensor, Var};
use crate::ehr::MIN_LOS_DAYS;
use crate::ehr::stay::MAX_LOS_DAYS;
use crate::error::{Error, Result};

/// Per-call forward settings and the batch-norm statistics it collects.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    /// Dropout is applied only in train mode and only when an RNG is given.
    pub dropout: Option<&'a mut ChaCha8Rng>,
    /// Presence mask `[B * T]`.
    pub mask: &'a [f64],
    /// Collected in train mode: (norm state index, statistics).
    pub norm_stats: Vec<(usize, BatchStats)>,
}

impl<'a> ForwardCtx<'a> {
    pub fn eval(mask: &'a [f64]) -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            dropout: None,
            mask,
            norm_stats: Vec::new(),
        }
    }

    pub fn train(mask: &'a [f64], dropout: Option<&'a mut ChaCha8Rng>) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            dropout,
            mask,
            norm_stats: Vec::new(),
        }
    }
}

/// State entering layer `n`.
#[derive(Clone, Debug)]
pub struct LayerState {
    pub n: usize,
    /// `[B, R, C, T]`
    pub h: Var,
    /// Pointwise outputs `[B, Z, T]` of layers `1..n`.
    pub history: Vec<Var>,
    /// `[B, F, T]`
    pub values: Var,
    /// `[B, F, T]`; `None` when decay is disconnected.
    pub decay: Option<Var>,
    /// Statics broadcast over time `[B, S, T]`.
    pub statics: Var,
}

#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// `[B, R, Y, T]` after norm and dropout.
    pub temporal: Option<Var>,
    /// `[B, Z, T]` after norm and dropout.
    pub pointwise: Option<Var>,
    /// `[B, R_out, C_out, T]`
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// Predicted remaining stay in days, `[B, T]`.
    pub los: Var,
    /// Mortality probability, `[B, T]`.
    pub mortality: Option<Var>,
    pub layers: Vec<LayerTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TpcModel {
    pub config: ModelConfig,
    pub ledger: Ledger,
    pub params: Vec<Param>,
    pub norms: Vec<NormState>,
    pub layout: Layout,
}

impl TpcModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<TpcModel> {
        let ledger = Ledger::build(&config)?;
        let (params, norms, layout) = init_parameters(&config, &ledger, seed);
        Ok(TpcModel {
            config,
            ledger,
            params,
            norms,
            layout,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Parameters as gradient-tracking leaves, in `params` order.
    pub fn param_vars(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.value.clone())).collect()
    }

    /// Parameters as constants, for inference.
    pub fn param_constants(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.constant(p.value.clone())).collect()
    }

    pub fn apply_norm_stats(&mut self, stats: &[(usize, BatchStats)]) {
        for (i, s) in stats {
            self.norms[*i].update(s);
        }
    }

    fn dropout(&self, g: &mut Graph, x: Var, p: f64, ctx: &mut ForwardCtx) -> Result<Var> {
        if ctx.mode != Mode::Train || p == 0.0 {
            return Ok(x);
        }
        let Some(rng) = ctx.dropout.as_deref_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - p);
        let mask = (0..g.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        g.mul_const(x, mask)
    }

    fn norm(
        &self,
        g: &mut Graph,
        x: Var,
        slot: Option<(usize, usize, usize)>,
        vars: &[Var],
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let Some((gamma, beta, state)) = slot else {
            return Ok(x);
        };
        let (out, stats) = g.batch_norm(x, vars[gamma], vars[beta], ctx.mask, &self.norms[state], ctx.mode)?;
        if let Some(s) = stats {
            ctx.norm_stats.push((state, s));
        }
        Ok(out)
    }

    fn layer_ledger(&self, n: usize) -> &LayerLedger {
        &self.ledger.layers[n - 1]
    }

    fn expect_shape(&self, g: &Graph, v: Var, shape: &[usize], what: &str) -> Result<()> {
        if g.shape(v) != shape {
            return Err(Error::config(format!(
                "{what}: shape {:?} violates the ledger ({:?})",
                g.shape(v),
                shape
            )));
        }
        Ok(())
    }

    /// Grouped dilated causal convolution of each feature's channels:
    /// `[B, R, C, T] -> [B, R, Y, T]`.
    pub fn temporal_branch(
        &self,
        g: &mut Graph,
        state: &LayerState,
        vars: &[Var],
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let l = *self.layer_ledger(state.n);
        let slots = &self.layout.layers[state.n - 1];
        let filters = slots
            .temporal
            .ok_or_else(|| Error::config(format!("{} has no temporal branch", self.config.variant)))?;
        let hs = g.shape(state.h).to_vec();
        let (b, t) = (hs[0], hs[3]);
        self.expect_shape(g, state.h, &[b, l.r, l.c, t], "temporal input")?;
        let out = g.grouped_causal_conv1d(state.h, vars[filters], l.dilation)?;
        let flat = g.reshape(out, &[b, l.r * l.y, t])?;
        let normed = self.norm(g, flat, slots.temporal_norm, vars, ctx)?;
        let out = g.reshape(normed, &[b, l.r, l.y, t])?;
        self.dropout(g, out, self.config.dropout_temp, ctx)
    }

    /// The same linear map at every hour over
    /// `[flatten(h_t), s, x''_t]`: `[B, P, T] -> [B, Z, T]`.
    pub fn pointwise_branch(
        &self,
        g: &mut Graph,
        state: &LayerState,
        vars: &[Var],
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let l = *self.layer_ledger(state.n);
        let slots = &self.layout.layers[state.n - 1];
        let (Some(w), Some(bias)) = (slots.point_weight, slots.point_bias) else {
            return Err(Error::config(format!("{} has no pointwise branch", self.config.variant)));
        };
        let hs = g.shape(state.h).to_vec();
        let (b, t) = (hs[0], hs[3]);
        let flat = g.reshape(state.h, &[b, l.r * l.c, t])?;
        let mut parts = vec![flat, state.statics];
        if let Some(d) = state.decay {
            parts.push(d);
        }
        let input = concat_nonempty(g, &parts, 1)?;
        self.expect_shape(g, input, &[b, l.p, t], "pointwise input")?;
        let out = g.pointwise_linear(input, vars[w], vars[bias])?;
        let out = self.norm(g, out, slots.point_norm, vars, ctx)?;
        self.dropout(g, out, self.config.dropout_main, ctx)
    }

    /// Builds the next layer's input from the branch outputs.
    ///
    /// Feature-block layout: each existing feature keeps its `Y` temporal
    /// channels followed by one skip channel (`x'` for original features, the
    /// creating layer's pointwise output otherwise); the `Z` new features
    /// follow, each the pointwise output repeated over all channels. ReLU
    /// covers the whole block.
    pub fn assemble_layer_output(
        &self,
        g: &mut Graph,
        state: &LayerState,
        temporal: Option<Var>,
        pointwise: Option<Var>,
    ) -> Result<Var> {
        let l = *self.layer_ledger(state.n);
        let hs = g.shape(state.h).to_vec();
        let (b, t) = (hs[0], hs[3]);
        let skip = |g: &mut Graph| -> Result<Var> {
            let mut rows = vec![state.values];
            rows.extend(state.history.iter().copied());
            let cat = g.concat(&rows, 1)?;
            g.reshape(cat, &[b, l.r, 1, t])
        };
        let block = match self.config.variant {
            Variant::Tpc | Variant::NoDecay => {
                let temp = temporal.ok_or_else(|| Error::Wiring("missing temporal output".into()))?;
                let point = pointwise.ok_or_else(|| Error::Wiring("missing pointwise output".into()))?;
                let skip = skip(g)?;
                let old = g.concat(&[temp, skip], 2)?;
                let new = g.broadcast_repeat(point, 2, l.c_out)?;
                g.concat(&[old, new], 1)?
            }
            Variant::NoSkip => {
                let temp = temporal.ok_or_else(|| Error::Wiring("missing temporal output".into()))?;
                let point = pointwise.ok_or_else(|| Error::Wiring("missing pointwise output".into()))?;
                let new = g.broadcast_repeat(point, 2, l.c_out)?;
                g.concat(&[temp, new], 1)?
            }
            Variant::TempOnly | Variant::TempOnlyWs => {
                let temp = temporal.ok_or_else(|| Error::Wiring("missing temporal output".into()))?;
                let skip = skip(g)?;
                g.concat(&[temp, skip], 2)?
            }
            Variant::PointOnly => {
                let point = pointwise.ok_or_else(|| Error::Wiring("missing pointwise output".into()))?;
                let skip = skip(g)?;
                let new = g.reshape(point, &[b, l.z, 1, t])?;
                g.concat(&[skip, new], 1)?
            }
        };
        let out = g.relu(block);
        self.expect_shape(g, out, &[b, l.r_out, l.c_out, t], "layer output")?;
        Ok(out)
    }

    /// Output transform of the LoS head: `hardtanh(exp(raw), 1/48, 100)`.
    pub fn los_from_logits(g: &mut Graph, raw: Var) -> Result<Var> {
        let los = g.exp(raw);
        g.hardtanh(los, MIN_LOS_DAYS, MAX_LOS_DAYS)
    }

    /// `ReLU(W d + b)`: `[B, D] -> [B, D*]`; `None` without diagnoses.
    pub fn embed_diagnoses(&self, g: &mut Graph, diagnoses: Var, vars: &[Var]) -> Result<Option<Var>> {
        let (Some(w), Some(bias)) = (self.layout.diag_weight, self.layout.diag_bias) else {
            return Ok(None);
        };
        let b = g.shape(diagnoses)[0];
        let d = g.reshape(diagnoses, &[b, self.config.diagnoses, 1])?;
        let e = g.pointwise_linear(d, vars[w], vars[bias])?;
        let e = g.relu(e);
        Ok(Some(g.reshape(e, &[b, self.config.diag_embedding])?))
    }

    /// Runs all layers and the head.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        input: InputVars,
        ctx: &mut ForwardCtx,
    ) -> Result<ModelOutput> {
        let cfg = &self.config;
        if vars.len() != self.params.len() {
            return Err(Error::Wiring(format!(
                "{} parameter vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let vs = g.shape(input.values).to_vec();
        if vs.len() != 3 || vs[1] != cfg.features || g.shape(input.decay) != vs.as_slice() {
            return Err(Error::Wiring(format!(
                "time series inputs {:?} do not match F = {}",
                vs, cfg.features
            )));
        }
        let (b, t) = (vs[0], vs[2]);
        if g.shape(input.statics) != [b, cfg.statics] {
            return Err(Error::Wiring(format!(
                "statics {:?} do not match S = {}",
                g.shape(input.statics),
                cfg.statics
            )));
        }
        if g.shape(input.diagnoses) != [b, cfg.diagnoses] {
            return Err(Error::Wiring(format!(
                "diagnoses {:?} do not match D = {}",
                g.shape(input.diagnoses),
                cfg.diagnoses
            )));
        }
        if t > cfg.horizon_hours {
            return Err(Error::Wiring(format!("{t} hours exceed the {} hour horizon", cfg.horizon_hours)));
        }
        if ctx.mask.len() != b * t {
            return Err(Error::dim(format!("mask has {} entries for [{b}, {t}]", ctx.mask.len())));
        }

        let decay = if cfg.variant.uses_decay() {
            Some(input.decay)
        } else {
            None
        };
        let h_decay = match decay {
            Some(d) => d,
            None => g.constant(Tensor::zeros(&[b, cfg.features, t])),
        };
        let v4 = g.reshape(input.values, &[b, cfg.features, 1, t])?;
        let d4 = g.reshape(h_decay, &[b, cfg.features, 1, t])?;
        let h = g.concat(&[v4, d4], 2)?;
        let statics = g.broadcast_repeat(input.statics, 2, t)?;

        let mut state = LayerState {
            n: 1,
            h,
            history: Vec::new(),
            values: input.values,
            decay,
            statics,
        };
        let mut traces = Vec::with_capacity(cfg.layers);
        for n in 1..=cfg.layers {
            state.n = n;
            let temporal = if cfg.variant.has_temporal() {
                Some(self.temporal_branch(g, &state, vars, ctx)?)
            } else {
                None
            };
            let pointwise = if cfg.variant.has_pointwise() {
                Some(self.pointwise_branch(g, &state, vars, ctx)?)
            } else {
                None
            };
            let output = self.assemble_layer_output(g, &state, temporal, pointwise)?;
            if let Some(p) = pointwise {
                let kept = if cfg.relu_skip_history { g.relu(p) } else { p };
                state.history.push(kept);
            }
            state.h = output;
            traces.push(LayerTrace {
                temporal,
                pointwise,
                output,
            });
        }

        let last = *self.ledger.last();
        let flat = g.reshape(state.h, &[b, last.r_out * last.c_out, t])?;
        let mut parts = vec![flat, state.statics];
        if let Some(e) = self.embed_diagnoses(g, input.diagnoses, vars)? {
            parts.push(g.broadcast_repeat(e, 2, t)?);
        }
        let head_in = concat_nonempty(g, &parts, 1)?;
        self.expect_shape(g, head_in, &[b, self.ledger.head_input, t], "head input")?;
        let head_in = self.dropout(g, head_in, cfg.dropout_main, ctx)?;
        let l = &self.layout;
        let hidden = g.pointwise_linear(head_in, vars[l.head_hidden_weight], vars[l.head_hidden_bias])?;
        let z = g.relu(hidden);
        let raw = g.pointwise_linear(z, vars[l.head_los_weight], vars[l.head_los_bias])?;
        let los = Self::los_from_logits(g, raw)?;
        let los = g.reshape(los, &[b, t])?;
        let mortality = match (l.head_mortality_weight, l.head_mortality_bias) {
            (Some(w), Some(bias)) => {
                let m = g.pointwise_linear(z, vars[w], vars[bias])?;
                let m = g.sigmoid(m);
                Some(g.reshape(m, &[b, t])?)
            }
            _ => None,
        };
        Ok(ModelOutput {
            los,
            mortality,
            layers: traces,
        })
    }
}

/// Concatenation that skips zero-width parts.
fn concat_nonempty(g: &mut Graph, parts: &[Var], axis: usize) -> Result<Var> {
    let kept: Vec<Var> = parts.iter().copied().filter(|v| g.shape(*v)[axis] > 0).collect();
    if kept.is_empty() {
        return Ok(parts[0]);
    }
    g.concat(&kept, axis)
}
