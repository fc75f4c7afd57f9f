use serde::{Deserialize, Serialize};

use crate::ehr::{FIRST_LABELLED_HOUR, HORIZON_HOURS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Tpc,
    TempOnly,
    PointOnly,
    TempOnlyWs,
    NoSkip,
    NoDecay,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Tpc,
        Variant::TempOnly,
        Variant::PointOnly,
        Variant::TempOnlyWs,
        Variant::NoSkip,
        Variant::NoDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tpc => "tpc",
            Variant::TempOnly => "temp_only",
            Variant::PointOnly => "point_only",
            Variant::TempOnlyWs => "temp_only_ws",
            Variant::NoSkip => "no_skip",
            Variant::NoDecay => "no_decay",
        }
    }

    pub fn has_temporal(self) -> bool {
        self != Variant::PointOnly
    }

    pub fn has_pointwise(self) -> bool {
        !matches!(self, Variant::TempOnly | Variant::TempOnlyWs)
    }

    pub fn shared_filters(self) -> bool {
        self == Variant::TempOnlyWs
    }

    pub fn has_skips(self) -> bool {
        self != Variant::NoSkip
    }

    pub fn uses_decay(self) -> bool {
        self != Variant::NoDecay
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Time-series features F (including the clock rows).
    pub features: usize,
    /// Static features S.
    pub statics: usize,
    /// Diagnosis nodes D; 0 disables the embedding.
    pub diagnoses: usize,
    /// Diagnosis embedding size D*.
    pub diag_embedding: usize,
    /// Layers N.
    pub layers: usize,
    /// Temporal channels Y per feature.
    pub temp_channels: usize,
    /// Pointwise channels Z per layer.
    pub point_channels: usize,
    pub kernel_size: usize,
    /// Hidden size X of the head.
    pub final_hidden: usize,
    pub dropout_main: f64,
    pub dropout_temp: f64,
    pub batch_norm: bool,
    pub variant: Variant,
    pub multitask: bool,
    /// Weight of the mortality loss.
    pub alpha: f64,
    pub horizon_hours: usize,
    pub prediction_start_hour: usize,
    /// Apply ReLU to pointwise outputs before they re-enter later layers as
    /// skip channels. Off by default: skips carry pre-activation outputs.
    #[serde(default)]
    pub relu_skip_history: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            features: 0,
            statics: 0,
            diagnoses: 0,
            diag_embedding: 64,
            layers: 9,
            temp_channels: 12,
            point_channels: 13,
            kernel_size: 4,
            final_hidden: 17,
            dropout_main: 0.45,
            dropout_temp: 0.05,
            batch_norm: true,
            variant: Variant::Tpc,
            multitask: false,
            alpha: 100.0,
            horizon_hours: HORIZON_HOURS,
            prediction_start_hour: FIRST_LABELLED_HOUR,
            relu_skip_history: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("layers", self.layers),
            ("temp_channels", self.temp_channels),
            ("point_channels", self.point_channels),
            ("kernel_size", self.kernel_size),
            ("final_hidden", self.final_hidden),
            ("horizon_hours", self.horizon_hours),
        ];
        for (name, v) in positive {
            if v == 0 {
                let why = match name {
                    "kernel_size" => " (a causal temporal filter spans d(k - 1) + 1 hours, so k >= 1)",
                    "layers" => " (the head reads the last layer's output)",
                    _ => "",
                };
                return Err(Error::config(format!("{name} must be at least 1{why}")));
            }
        }
        if self.diagnoses > 0 && self.diag_embedding == 0 {
            return Err(Error::config("diag_embedding must be at least 1 when diagnoses are present"));
        }
        for (name, p) in [("dropout_main", self.dropout_main), ("dropout_temp", self.dropout_temp)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Effective diagnosis embedding width (0 without diagnoses).
    pub fn embedding_width(&self) -> usize {
        if self.diagnoses == 0 {
            0
        } else {
            self.diag_embedding
        }
    }
}

/// Channel bookkeeping for one layer `n` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLedger {
    pub n: usize,
    /// Feature groups entering the layer.
    pub r: usize,
    /// Channels per feature entering the layer.
    pub c: usize,
    /// Temporal output channels per feature (0 without a temporal branch).
    pub y: usize,
    /// Pointwise input width (0 without a pointwise branch).
    pub p: usize,
    /// Pointwise outputs (0 without a pointwise branch).
    pub z: usize,
    pub r_out: usize,
    pub c_out: usize,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub layers: Vec<LayerLedger>,
    /// Width of the head input per time step.
    pub head_input: usize,
}

impl Ledger {
    pub fn build(cfg: &ModelConfig) -> Result<Ledger> {
        cfg.validate()?;
        let (f, s, y, z) = (cfg.features, cfg.statics, cfg.temp_channels, cfg.point_channels);
        let v = cfg.variant;
        let decay_in = if v.uses_decay() { f } else { 0 };
        let mut layers = Vec::with_capacity(cfg.layers);
        for n in 1..=cfg.layers {
            let (r, c_later, c_out) = match v {
                Variant::TempOnly | Variant::TempOnlyWs => (f, y + 1, y + 1),
                Variant::PointOnly => (f + z * (n - 1), 1, 1),
                Variant::NoSkip => (f + z * (n - 1), y, y),
                Variant::Tpc | Variant::NoDecay => (f + z * (n - 1), y + 1, y + 1),
            };
            let c = if n == 1 { 2 } else { c_later };
            let zp = if v.has_pointwise() { z } else { 0 };
            layers.push(LayerLedger {
                n,
                r,
                c,
                y: if v.has_temporal() { y } else { 0 },
                p: if v.has_pointwise() { r * c + decay_in + s } else { 0 },
                z: zp,
                r_out: r + zp,
                c_out,
                dilation: n,
            });
        }
        let last = layers.last().expect("at least one layer");
        let head_input = last.r_out * last.c_out + s + cfg.embedding_width();
        let ledger = Ledger { layers, head_input };
        ledger.check(cfg)?;
        Ok(ledger)
    }

    /// Consistency between consecutive layers.
    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[0].r_out != w[1].r || w[0].c_out != w[1].c {
                return Err(Error::Wiring(format!(
                    "layer {} emits [{}, {}] but layer {} expects [{}, {}]",
                    w[0].n, w[0].r_out, w[0].c_out, w[1].n, w[1].r, w[1].c
                )));
            }
        }
        if self.layers[0].r != cfg.features || self.layers[0].c != 2 {
            return Err(Error::Wiring("layer 1 must see [F, 2] inputs".into()));
        }
        Ok(())
    }

    pub fn last(&self) -> &LayerLedger {
        self.layers.last().expect("at least one layer")
    }
}
