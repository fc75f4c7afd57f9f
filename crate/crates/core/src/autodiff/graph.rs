//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Every operation appends one node holding its value and the ids of its
//! inputs, so node order is a topological order. `backward` walks the nodes
//! once in reverse.

use super::kernels::{self, ConvDims, PointwiseDims};
use super::norm::{self, BatchStats, Mode, NormState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    Exp,
    Log,
    Sigmoid,
    /// Clamp to `[lo, hi]`; gradient 1 strictly inside, 0 elsewhere.
    HardTanh { lo: f64, hi: f64 },
    Square,
    Scale(f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(Var, Unary),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    DivConst(Var, Vec<f64>),
    Sum(Var),
    MaskedMean { x: Var, mask: Vec<f64>, count: f64 },
    Concat { inputs: Vec<Var>, axis: usize },
    BroadcastRepeat { x: Var, axis: usize, count: usize },
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Conv { input: Var, filters: Var, dims: ConvDims },
    Pointwise { input: Var, weight: Var, bias: Var, dims: PointwiseDims },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mask: Vec<f64>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        dims: (usize, usize, usize),
        train: bool,
    },
    Bce { p: Var, labels: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Unary(_, u) => match u {
                Unary::Relu => "relu",
                Unary::Exp => "exp",
                Unary::Log => "log",
                Unary::Sigmoid => "sigmoid",
                Unary::HardTanh { .. } => "hardtanh",
                Unary::Square => "square",
                Unary::Scale(_) => "scale",
            },
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::DivConst(..) => "div_const",
            Op::Sum(_) => "sum",
            Op::MaskedMean { .. } => "masked_mean",
            Op::Concat { .. } => "concat",
            Op::BroadcastRepeat { .. } => "broadcast_repeat",
            Op::Reshape(_) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Conv { .. } => "grouped_causal_conv1d",
            Op::Pointwise { .. } => "pointwise_linear",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Bce { .. } => "binary_cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Clamp applied to probabilities inside the cross-entropy node.
const BCE_EPS: f64 = 1e-12;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Vec<f64>>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Operation names in recording order.
    pub fn op_trace(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----- elementwise -----

    pub fn unary(&mut self, x: Var, kind: Unary) -> Result<Var> {
        let xv = self.value(x);
        if let Unary::Log = kind {
            if let Some(bad) = xv.data().iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain(format!("log of non-positive value {bad}")));
            }
        }
        if let Unary::HardTanh { lo, hi } = kind {
            if !(lo <= hi) {
                return Err(Error::Domain(format!("hardtanh bounds [{lo}, {hi}]")));
            }
        }
        let out = xv.map(|v| match kind {
            Unary::Relu => v.max(0.0),
            Unary::Exp => v.exp(),
            Unary::Log => v.ln(),
            Unary::Sigmoid => sigmoid(v),
            Unary::HardTanh { lo, hi } => v.clamp(lo, hi),
            Unary::Square => v * v,
            Unary::Scale(c) => c * v,
        });
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Unary(x, kind), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu).expect("relu is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp).expect("exp is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn hardtanh(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, Unary::HardTanh { lo, hi })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square).expect("square is total")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Scale(c)).expect("scale is total")
    }

    fn binary_shape_check(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(data, Op::Mul(a, b), rg))
    }

    /// Multiplies by a fixed array (dropout masks, channel zeroing).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim(format!(
                "mul_const: {} factors for {} elements",
                c.len(),
                self.value(x).len()
            )));
        }
        let xv = self.value(x);
        let data: Vec<f64> = xv.data().iter().zip(&c).map(|(a, b)| a * b).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    /// Divides by a fixed array elementwise. Division is correctly rounded,
    /// so `(2y) / y` is exactly 2 where `(2y) * (1 / y)` need not be.
    pub fn div_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::dim(format!(
                "div_const: {} divisors for {} elements",
                c.len(),
                self.value(x).len()
            )));
        }
        let xv = self.value(x);
        let data: Vec<f64> = xv.data().iter().zip(&c).map(|(a, b)| a / b).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::DivConst(x, c), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `sum(mask * x) / sum(mask)`; the divisor is the mask sum, not the length.
    pub fn masked_mean(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.len() {
            return Err(Error::dim(format!(
                "masked_mean: mask has {} entries, tensor {}",
                mask.len(),
                xv.len()
            )));
        }
        let count: f64 = mask.iter().sum();
        if count <= 0.0 {
            return Err(Error::DegenerateMask(
                "masked_mean over an empty mask".into(),
            ));
        }
        let mut s = 0.0;
        for (v, m) in xv.data().iter().zip(mask) {
            if *m != 0.0 {
                s += m * v;
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::scalar(s / count),
            Op::MaskedMean {
                x,
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Elementwise binary cross-entropy of probabilities against fixed labels.
    pub fn binary_cross_entropy(&mut self, p: Var, labels: &[f64]) -> Result<Var> {
        let pv = self.value(p);
        if labels.len() != pv.len() {
            return Err(Error::dim("binary_cross_entropy: label count mismatch"));
        }
        let data: Vec<f64> = pv
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &l)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(l * p.ln() + (1.0 - l) * (1.0 - p).ln())
            })
            .collect();
        let out = Tensor::new(pv.shape().to_vec(), data)?;
        let rg = self.any_grad(&[p]);
        Ok(self.push(
            out,
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    // ----- structural -----

    /// Concatenates along `axis`, preserving input order.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let agrees = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::dim(format!(
                    "concat axis {axis}: shape {:?} incompatible with {:?}",
                    s, base
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                data.extend_from_slice(&self.value(*v).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Inserts a new axis of extent `count` at `axis`, repeating the input.
    pub fn broadcast_repeat(&mut self, x: Var, axis: usize, count: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis > s.len() {
            return Err(Error::dim(format!("broadcast axis {axis} on rank {}", s.len())));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis..].iter().product();
        let mut shape = s.clone();
        shape.insert(axis, count);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            for _ in 0..count {
                data.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::BroadcastRepeat { x, axis, count },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Row-major flatten to rank 1.
    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        self.reshape(x, &[n]).expect("flatten preserves length")
    }

    /// `len` consecutive indices from `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::dim(format!(
                "slice [{start}, {}) on axis {axis} of shape {:?}",
                start + len,
                s
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }, rg))
    }

    // ----- convolutions -----

    /// Causal dilated convolution applied independently per group.
    ///
    /// `input` is `[.., G, C, T]` and `filters` `[G, Y, C, k]` (or `[1, Y, C, k]`
    /// to share one filter bank across all groups). The output is `[.., G, Y, T]`
    /// with `out[g, y, t] = sum_{c, j} f[g, y, c, j] * in[g, c, t - dilation * j]`
    /// and zero left-padding of `dilation * (k - 1)`.
    pub fn grouped_causal_conv1d(
        &mut self,
        input: Var,
        filters: Var,
        dilation: usize,
    ) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let fs = self.shape(filters).to_vec();
        if dilation == 0 {
            return Err(Error::dim("dilation must be at least 1"));
        }
        if is.len() < 3 || fs.len() != 4 {
            return Err(Error::dim(format!(
                "conv expects input [.., G, C, T] and filters [G, Y, C, k]; got {:?} and {:?}",
                is, fs
            )));
        }
        let r = is.len();
        let (groups, channels, time) = (is[r - 3], is[r - 2], is[r - 1]);
        let (fgroups, out_channels, fchannels, kernel) = (fs[0], fs[1], fs[2], fs[3]);
        if kernel == 0 {
            return Err(Error::dim("kernel size must be at least 1"));
        }
        if fchannels != channels {
            return Err(Error::dim(format!(
                "filters expect {fchannels} channels, input has {channels}"
            )));
        }
        if fgroups != groups && fgroups != 1 {
            return Err(Error::dim(format!(
                "filters have {fgroups} groups, input has {groups}"
            )));
        }
        let dims = ConvDims {
            lead: is[..r - 3].iter().product(),
            groups,
            channels,
            time,
            out_channels,
            kernel,
            dilation,
            shared: fgroups == 1 && groups != 1,
        };
        let out = kernels::conv_forward(
            self.value(input).data(),
            self.value(filters).data(),
            dims,
        );
        let mut shape = is[..r - 3].to_vec();
        shape.extend([groups, out_channels, time]);
        let rg = self.any_grad(&[input, filters]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Conv {
                input,
                filters,
                dims,
            },
            rg,
        ))
    }

    /// The same affine map at every time step: `[.., P, T] -> [.., Z, T]`.
    pub fn pointwise_linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let is = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        let bs = self.shape(bias).to_vec();
        if is.len() < 2 || ws.len() != 2 {
            return Err(Error::dim(format!(
                "pointwise expects input [.., P, T] and weight [Z, P]; got {:?} and {:?}",
                is, ws
            )));
        }
        let r = is.len();
        let (inputs, time) = (is[r - 2], is[r - 1]);
        if ws[1] != inputs {
            return Err(Error::dim(format!(
                "pointwise weight has {} columns, input has {} features",
                ws[1], inputs
            )));
        }
        if bs != [ws[0]] {
            return Err(Error::dim(format!(
                "pointwise bias shape {:?}, expected [{}]",
                bs, ws[0]
            )));
        }
        let dims = PointwiseDims {
            lead: is[..r - 2].iter().product(),
            inputs,
            outputs: ws[0],
            time,
        };
        let out = kernels::pointwise_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            dims,
        );
        let mut shape = is[..r - 2].to_vec();
        shape.extend([ws[0], time]);
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Pointwise {
                input,
                weight,
                bias,
                dims,
            },
            rg,
        ))
    }

    /// Batch normalisation of a `[B, C, T]` tensor over the positions where
    /// `mask` (`[B, T]`, 0/1) is set. Train mode also returns the batch
    /// statistics for the caller to fold into `state`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mask: &[f64],
        state: &NormState,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("batch_norm expects [B, C, T], got {:?}", s)));
        }
        let (lead, ch, time) = (s[0], s[1], s[2]);
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] || state.channels() != ch {
            return Err(Error::dim(format!(
                "batch_norm affine/state size mismatch for {ch} channels"
            )));
        }
        if mask.len() != lead * time {
            return Err(Error::dim(format!(
                "batch_norm mask has {} entries, expected {}",
                mask.len(),
                lead * time
            )));
        }
        let running = match mode {
            Mode::Train => {
                if mask.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::DegenerateMask(
                        "batch_norm with no valid positions".into(),
                    ));
                }
                None
            }
            Mode::Eval => {
                if state.updates == 0 {
                    return Err(Error::Contract(
                        "batch_norm eval mode before running statistics were updated".into(),
                    ));
                }
                Some(state)
            }
        };
        let fwd = norm::norm_forward(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            mask,
            (lead, ch, time),
            running,
        );
        let rg = self.any_grad(&[x, gamma, beta]);
        let v = self.push(
            Tensor::new(s, fwd.out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mask: mask.to_vec(),
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                dims: (lead, ch, time),
                train: mode == Mode::Train,
            },
            rg,
        );
        Ok((v, fwd.stats))
    }

    // ----- gradients -----

    /// Populates gradients of `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::Contract(
                "backward called twice without zero_grad".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Clears gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads = None;
    }

    /// Gradient of the last backward pass. `None` before backward or for
    /// nodes that do not require gradients; zeros for unreachable ones.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.as_ref()?;
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape().to_vec();
        Some(match &grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contribution: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contribution) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Unary(x, kind) => {
                let xv = self.value(*x).data();
                let yv = node.value.data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(&g, (&x, &y))| {
                        if g == 0.0 {
                            return 0.0;
                        }
                        g * match *kind {
                            Unary::Relu => {
                                if x > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => y,
                            Unary::Log => 1.0 / x,
                            Unary::Sigmoid => y * (1.0 - y),
                            Unary::HardTanh { lo, hi } => {
                                if x > lo && x < hi {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * x,
                            Unary::Scale(c) => c,
                        }
                    })
                    .collect();
                send(*x, d);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                send(*a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                send(*b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::MulConst(x, c) => {
                send(*x, g.iter().zip(c).map(|(g, c)| g * c).collect());
            }
            Op::DivConst(x, c) => {
                send(*x, g.iter().zip(c).map(|(g, c)| g / c).collect());
            }
            Op::Sum(x) => {
                send(*x, vec![g[0]; self.value(*x).len()]);
            }
            Op::MaskedMean { x, mask, count } => {
                send(*x, mask.iter().map(|m| g[0] * m / count).collect());
            }
            Op::Bce { p, labels } => {
                let pv = self.value(*p).data();
                let d = g
                    .iter()
                    .zip(pv.iter().zip(labels))
                    .map(|(&g, (&p, &l))| {
                        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        g * (p - l) / (p * (1.0 - p))
                    })
                    .collect();
                send(*p, d);
            }
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis] * inner;
                    let mut d = Vec::with_capacity(outer * len);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * total + offset..o * total + offset + len]);
                    }
                    offset += len;
                    send(*v, d);
                }
            }
            Op::BroadcastRepeat { x, axis, count } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis..].iter().product();
                let mut d = vec![0.0; outer * inner];
                for o in 0..outer {
                    for r in 0..*count {
                        let src = &g[(o * count + r) * inner..(o * count + r + 1) * inner];
                        for (a, b) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                send(*x, d);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let len = node.value.shape()[*axis];
                let mut d = vec![0.0; self.value(*x).len()];
                for o in 0..outer {
                    let dst = (o * xs[*axis] + start) * inner;
                    d[dst..dst + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, d);
            }
            Op::Conv {
                input,
                filters,
                dims,
            } => {
                let (gi, gf) = kernels::conv_backward(
                    self.value(*input).data(),
                    self.value(*filters).data(),
                    g,
                    *dims,
                    self.nodes[input.0].requires_grad,
                    self.nodes[filters.0].requires_grad,
                );
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                if let Some(gf) = gf {
                    send(*filters, gf);
                }
            }
            Op::Pointwise {
                input,
                weight,
                bias,
                dims,
            } => {
                let need = [input, weight, bias].map(|v| self.nodes[v.0].requires_grad);
                let (gi, gw, gb) = kernels::pointwise_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    *dims,
                    need,
                );
                if let Some(gi) = gi {
                    send(*input, gi);
                }
                if let Some(gw) = gw {
                    send(*weight, gw);
                }
                if let Some(gb) = gb {
                    send(*bias, gb);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mask,
                xhat,
                inv_std,
                dims,
                train,
            } => {
                let (dx, dgamma, dbeta) = norm::norm_backward(
                    g,
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    mask,
                    *dims,
                    *train,
                );
                send(*x, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}
