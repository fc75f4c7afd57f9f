//! Raw slice kernels for the two convolution primitives.
//!
//! Layouts are row-major. The grouped convolution works on `[lead, G, C, T]`
//! input with `[G or 1, Y, C, k]` filters, where `lead` is the product of any
//! leading (batch) axes. Filter tap `j` (0-based) reads the input `dilation * j`
//! steps in the past, so tap 0 is the current time step and all taps that
//! would read before `t = 0` see the implicit left zero-padding.

use rayon::prelude::*;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub lead: usize,
    pub groups: usize,
    pub channels: usize,
    pub time: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// One filter bank applied to every group.
    pub shared: bool,
}

impl ConvDims {
    fn filter_group(&self, group: usize) -> usize {
        if self.shared {
            0
        } else {
            group
        }
    }

    fn filter_bank_len(&self) -> usize {
        self.out_channels * self.channels * self.kernel
    }
}

pub(crate) fn conv_forward(input: &[f64], filters: &[f64], d: ConvDims) -> Vec<f64> {
    let (c_n, t_n, y_n, k_n) = (d.channels, d.time, d.out_channels, d.kernel);
    let mut out = vec![0.0; d.lead * d.groups * y_n * t_n];
    if t_n == 0 {
        return out;
    }
    out.par_chunks_mut(y_n * t_n)
        .enumerate()
        .for_each(|(bg, out_block)| {
            let fg = d.filter_group(bg % d.groups);
            let bank = &filters[fg * d.filter_bank_len()..(fg + 1) * d.filter_bank_len()];
            let inp = &input[bg * c_n * t_n..(bg + 1) * c_n * t_n];
            for y in 0..y_n {
                let orow = &mut out_block[y * t_n..(y + 1) * t_n];
                for c in 0..c_n {
                    let irow = &inp[c * t_n..(c + 1) * t_n];
                    for j in 0..k_n {
                        let shift = d.dilation * j;
                        if shift >= t_n {
                            break;
                        }
                        let w = bank[(y * c_n + c) * k_n + j];
                        for (o, &x) in orow[shift..].iter_mut().zip(irow) {
                            *o += w * x;
                        }
                    }
                }
            }
        });
    out
}

/// Returns (input gradient, filter gradient).
pub(crate) fn conv_backward(
    input: &[f64],
    filters: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    need_input: bool,
    need_filters: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (c_n, t_n, y_n, k_n) = (d.channels, d.time, d.out_channels, d.kernel);
    let grad_in = need_input.then(|| {
        let mut gi = vec![0.0; input.len()];
        if t_n > 0 {
            gi.par_chunks_mut(c_n * t_n)
                .enumerate()
                .for_each(|(bg, gblock)| {
                    let fg = d.filter_group(bg % d.groups);
                    let bank =
                        &filters[fg * d.filter_bank_len()..(fg + 1) * d.filter_bank_len()];
                    let go = &grad_out[bg * y_n * t_n..(bg + 1) * y_n * t_n];
                    for c in 0..c_n {
                        let grow = &mut gblock[c * t_n..(c + 1) * t_n];
                        for y in 0..y_n {
                            let orow = &go[y * t_n..(y + 1) * t_n];
                            for j in 0..k_n {
                                let shift = d.dilation * j;
                                if shift >= t_n {
                                    break;
                                }
                                let w = bank[(y * c_n + c) * k_n + j];
                                for (g, &o) in grow.iter_mut().zip(&orow[shift..]) {
                                    *g += w * o;
                                }
                            }
                        }
                    }
                });
        }
        gi
    });
    let grad_f = need_filters.then(|| {
        let mut gf = vec![0.0; filters.len()];
        let bank_len = d.filter_bank_len();
        gf.par_chunks_mut(bank_len)
            .enumerate()
            .for_each(|(fg, gbank)| {
                for b in 0..d.lead {
                    for g in 0..d.groups {
                        if d.filter_group(g) != fg {
                            continue;
                        }
                        let bg = b * d.groups + g;
                        let inp = &input[bg * c_n * t_n..(bg + 1) * c_n * t_n];
                        let go = &grad_out[bg * y_n * t_n..(bg + 1) * y_n * t_n];
                        for y in 0..y_n {
                            let orow = &go[y * t_n..(y + 1) * t_n];
                            for c in 0..c_n {
                                let irow = &inp[c * t_n..(c + 1) * t_n];
                                for j in 0..k_n {
                                    let shift = d.dilation * j;
                                    if shift >= t_n {
                                        break;
                                    }
                                    let acc: f64 = orow[shift..]
                                        .iter()
                                        .zip(irow)
                                        .map(|(o, x)| o * x)
                                        .sum();
                                    gbank[(y * c_n + c) * k_n + j] += acc;
                                }
                            }
                        }
                    }
                }
            });
        gf
    });
    (grad_in, grad_f)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PointwiseDims {
    pub lead: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub time: usize,
}

/// `out[b, z, t] = sum_p W[z, p] * in[b, p, t] + bias[z]`, the sum taken in
/// increasing `p` before the bias is added.
pub(crate) fn pointwise_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    d: PointwiseDims,
) -> Vec<f64> {
    let (p_n, z_n, t_n) = (d.inputs, d.outputs, d.time);
    let mut out = vec![0.0; d.lead * z_n * t_n];
    if t_n == 0 {
        return out;
    }
    out.par_chunks_mut(z_n * t_n)
        .enumerate()
        .for_each(|(b, oblock)| {
            let inp = &input[b * p_n * t_n..(b + 1) * p_n * t_n];
            for z in 0..z_n {
                let orow = &mut oblock[z * t_n..(z + 1) * t_n];
                for p in 0..p_n {
                    let w = weight[z * p_n + p];
                    for (o, &x) in orow.iter_mut().zip(&inp[p * t_n..(p + 1) * t_n]) {
                        *o += w * x;
                    }
                }
                for o in orow.iter_mut() {
                    *o += bias[z];
                }
            }
        });
    out
}

/// Returns (input gradient, weight gradient, bias gradient).
pub(crate) fn pointwise_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    d: PointwiseDims,
    need: [bool; 3],
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (p_n, z_n, t_n) = (d.inputs, d.outputs, d.time);
    let gi = need[0].then(|| {
        let mut gi = vec![0.0; input.len()];
        if t_n > 0 {
            gi.par_chunks_mut(p_n * t_n)
                .enumerate()
                .for_each(|(b, gblock)| {
                    let go = &grad_out[b * z_n * t_n..(b + 1) * z_n * t_n];
                    for p in 0..p_n {
                        let grow = &mut gblock[p * t_n..(p + 1) * t_n];
                        for z in 0..z_n {
                            let w = weight[z * p_n + p];
                            for (g, &o) in grow.iter_mut().zip(&go[z * t_n..(z + 1) * t_n]) {
                                *g += w * o;
                            }
                        }
                    }
                });
        }
        gi
    });
    let gw = need[1].then(|| {
        let mut gw = vec![0.0; weight.len()];
        if p_n > 0 {
            gw.par_chunks_mut(p_n).enumerate().for_each(|(z, grow)| {
                for b in 0..d.lead {
                    let orow = &grad_out[(b * z_n + z) * t_n..(b * z_n + z + 1) * t_n];
                    for (p, g) in grow.iter_mut().enumerate() {
                        let irow = &input[(b * p_n + p) * t_n..(b * p_n + p + 1) * t_n];
                        *g += irow.iter().zip(orow).map(|(x, o)| x * o).sum::<f64>();
                    }
                }
            });
        }
        gw
    });
    let gb = need[2].then(|| {
        (0..z_n)
            .map(|z| {
                (0..d.lead)
                    .map(|b| {
                        grad_out[(b * z_n + z) * t_n..(b * z_n + z + 1) * t_n]
                            .iter()
                            .sum::<f64>()
                    })
                    .sum()
            })
            .collect()
    });
    (gi, gw, gb)
}
