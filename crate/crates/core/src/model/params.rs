use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Ledger, ModelConfig};
use crate::autodiff::{NormState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Indices into the flat parameter list for one layer.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerSlots {
    pub temporal: Option<usize>,
    pub point_weight: Option<usize>,
    pub point_bias: Option<usize>,
    /// (gamma, beta, norm state index)
    pub temporal_norm: Option<(usize, usize, usize)>,
    pub point_norm: Option<(usize, usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub layers: Vec<LayerSlots>,
    pub diag_weight: Option<usize>,
    pub diag_bias: Option<usize>,
    pub head_hidden_weight: usize,
    pub head_hidden_bias: usize,
    pub head_los_weight: usize,
    pub head_los_bias: usize,
    pub head_mortality_weight: Option<usize>,
    pub head_mortality_bias: Option<usize>,
}

enum Init {
    /// Uniform in `±sqrt(1 / fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

struct Builder {
    params: Vec<Param>,
    norms: Vec<NormState>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::FanIn(fan_in) => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        self.params.push(Param {
            name,
            value: Tensor::new(shape.to_vec(), data).expect("consistent shape"),
        });
        self.params.len() - 1
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> (usize, usize, usize) {
        let g = self.add(format!("{prefix}.gamma"), &[channels], Init::Ones);
        let b = self.add(format!("{prefix}.beta"), &[channels], Init::Zeros);
        self.norms.push(NormState::new(channels));
        (g, b, self.norms.len() - 1)
    }
}

/// Builds and initialises every parameter in a fixed order. The mortality
/// head comes last so enabling it leaves the other draws unchanged.
pub fn init_parameters(
    cfg: &ModelConfig,
    ledger: &Ledger,
    seed: u64,
) -> (Vec<Param>, Vec<NormState>, Layout) {
    let mut b = Builder {
        params: Vec::new(),
        norms: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let v = cfg.variant;
    let k = cfg.kernel_size;
    let mut layout = Layout::default();
    for l in &ledger.layers {
        let mut slots = LayerSlots::default();
        let n = l.n;
        if v.has_temporal() {
            let groups = if v.shared_filters() { 1 } else { l.r };
            slots.temporal = Some(b.add(
                format!("layer{n}.temporal"),
                &[groups, l.y, l.c, k],
                Init::FanIn(l.c * k),
            ));
            if cfg.batch_norm {
                slots.temporal_norm = Some(b.norm(&format!("layer{n}.temporal_norm"), l.r * l.y));
            }
        }
        if v.has_pointwise() {
            slots.point_weight = Some(b.add(format!("layer{n}.point.weight"), &[l.z, l.p], Init::FanIn(l.p)));
            slots.point_bias = Some(b.add(format!("layer{n}.point.bias"), &[l.z], Init::Zeros));
            if cfg.batch_norm {
                slots.point_norm = Some(b.norm(&format!("layer{n}.point_norm"), l.z));
            }
        }
        layout.layers.push(slots);
    }
    let emb = cfg.embedding_width();
    if emb > 0 {
        layout.diag_weight = Some(b.add("diag.weight".into(), &[emb, cfg.diagnoses], Init::FanIn(cfg.diagnoses)));
        layout.diag_bias = Some(b.add("diag.bias".into(), &[emb], Init::Zeros));
    }
    let x = cfg.final_hidden;
    layout.head_hidden_weight = b.add("head.hidden.weight".into(), &[x, ledger.head_input], Init::FanIn(ledger.head_input));
    layout.head_hidden_bias = b.add("head.hidden.bias".into(), &[x], Init::Zeros);
    layout.head_los_weight = b.add("head.los.weight".into(), &[1, x], Init::FanIn(x));
    layout.head_los_bias = b.add("head.los.bias".into(), &[1], Init::Zeros);
    if cfg.multitask {
        layout.head_mortality_weight = Some(b.add("head.mortality.weight".into(), &[1, x], Init::FanIn(x)));
        layout.head_mortality_bias = Some(b.add("head.mortality.bias".into(), &[1], Init::Zeros));
    }
    (b.params, b.norms, layout)
}
