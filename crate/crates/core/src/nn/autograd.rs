//! Tape-based reverse-mode differentiation over single-sample tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Image tensors are
//! `C x H x W`; batching happens one level up by running one tape per sample
//! and reducing the resulting [`Gradients`] in a fixed order.

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    Conv {
        x: usize,
        w: usize,
        b: usize,
        ks: usize,
        /// Unfolded input; `None` for 1x1 kernels where the input is used directly.
        cols: Option<Vec<f32>>,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Silu {
        x: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    ChannelBias {
        x: usize,
        bias: usize,
    },
    ScaleBy {
        x: usize,
        s: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    AvgPool2 {
        x: usize,
    },
    Upsample2 {
        x: usize,
    },
    MseTo {
        x: usize,
        target: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: usize) -> &[usize] {
        self.nodes[v].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[usize]) -> Var {
        let needs_grad = matches!(op, Op::Param(_)) || parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, &[])
    }

    /// Records a parameter leaf, reusing the node if it was already loaded.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(n) = self.param_nodes[id.0] {
            return Var(n);
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id.0), &[]);
        self.param_nodes[id.0] = Some(v.0);
        v
    }

    /// Fails with the layer name if `v` holds a non-finite value.
    pub fn check_finite(&self, v: Var, layer: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLayer {
                layer: layer.to_string(),
            })
        }
    }

    /// Stride-1 "same" convolution. `w` is `[Cout, Cin*ks*ks]`, `b` is `[Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, ks: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).chw()?;
        let wshape = self.shape(w.0).to_vec();
        if wshape.len() != 2 || wshape[1] != cin * ks * ks {
            return Err(Error::shape(
                "conv2d",
                format!("weight {wshape:?} does not fit input channels {cin} with kernel {ks}"),
            ));
        }
        let cout = wshape[0];
        if self.shape(b.0) != [cout] {
            return Err(Error::shape("conv2d", "bias length differs from output channels"));
        }
        let hw = h * wd;
        let cols = if ks == 1 {
            None
        } else {
            Some(kernels::im2col(self.value(x).data(), cin, h, wd, ks))
        };
        let mut out = vec![0.0f32; cout * hw];
        {
            let bias = self.value(b).data();
            for (co, chunk) in out.chunks_mut(hw).enumerate() {
                chunk.fill(bias[co]);
            }
            let rhs = cols.as_deref().unwrap_or_else(|| self.value(x).data());
            kernels::gemm(cout, cin * ks * ks, hw, self.value(w).data(), false, rhs, false, 1.0, &mut out);
        }
        let value = Tensor::from_parts(vec![cout, h, wd], out);
        Ok(self.push(
            value,
            Op::Conv {
                x: x.0,
                w: w.0,
                b: b.0,
                ks,
                cols,
            },
            &[x.0, w.0, b.0],
        ))
    }

    /// Dense layer on a vector: `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xin = self.value(x).numel();
        let ws = self.shape(w.0).to_vec();
        if ws.len() != 2 || ws[1] != xin || self.shape(b.0) != [ws[0]] {
            return Err(Error::shape("linear", format!("weight {ws:?} vs input length {xin}")));
        }
        let mut out = self.value(b).data().to_vec();
        kernels::gemm(ws[0], xin, 1, self.value(w).data(), false, self.value(x).data(), false, 1.0, &mut out);
        Ok(self.push(Tensor::from_vec(out), Op::Linear { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0]))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::shape("group_norm", format!("{c} channels not divisible into {groups} groups")));
        }
        let fwd = kernels::group_norm_forward(
            self.value(x).data(),
            c,
            h * w,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        Ok(self.push(
            Tensor::from_parts(vec![c, h, w], fwd.out),
            Op::GroupNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                groups,
                xhat: fwd.xhat,
                rstd: fwd.rstd,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * kernels::sigmoid(v));
        self.push(value, Op::Silu { x: x.0 }, &[x.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.value(bias).numel() != c {
            return Err(Error::shape("channel_bias", "bias length differs from channel count"));
        }
        let hw = h * w;
        let mut out = self.value(x).data().to_vec();
        for (chunk, &bv) in out.chunks_mut(hw).zip(self.value(bias).data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.push(Tensor::from_parts(vec![c, h, w], out), Op::ChannelBias { x: x.0, bias: bias.0 }, &[x.0, bias.0]))
    }

    /// Multiplies `x` by a single-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("scale_by", "scale must hold one element"));
        }
        let sv = self.value(s).data()[0];
        let value = self.value(x).scale(sv);
        Ok(self.push(value, Op::ScaleBy { x: x.0, s: s.0 }, &[x.0, s.0]))
    }

    /// Channel concatenation of two `C x H x W` values.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Tensor::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Concat { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("avg_pool2", format!("odd spatial size {h}x{w}")));
        }
        let out = kernels::avg_pool2(self.value(x).data(), c, h, w);
        Ok(self.push(Tensor::from_parts(vec![c, h / 2, w / 2], out), Op::AvgPool2 { x: x.0 }, &[x.0]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let out = kernels::upsample2(self.value(x).data(), c, h, w);
        Ok(self.push(Tensor::from_parts(vec![c, 2 * h, 2 * w], out), Op::Upsample2 { x: x.0 }, &[x.0]))
    }

    /// Mean squared error against a constant target; a one-element result.
    pub fn mse_to(&mut self, x: Var, target: &Tensor) -> Result<Var> {
        self.value(x).check_same_shape(target, "mse_to")?;
        let n = target.numel() as f64;
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        Ok(self.push(
            Tensor::scalar((s / n) as f32),
            Op::MseTo {
                x: x.0,
                target: target.data().to_vec(),
            },
            &[x.0],
        ))
    }

    /// Reverse pass from a one-element `loss`. Parameters that did not take
    /// part receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called without a recorded forward pass".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    for (d, v) in out.slot_mut(*pid).data_mut().iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::Conv { x, w, b, ks, cols } => {
                    let (cin, h, wd) = self.nodes[*x].value.chw()?;
                    let hw = h * wd;
                    let cout = node.value.shape()[0];
                    let kdim = cin * ks * ks;
                    if self.nodes[*b].needs_grad {
                        let db: Vec<f32> = g.chunks(hw).map(|c| c.iter().sum()).collect();
                        accumulate(&mut grads[*b], &db);
                    }
                    if self.nodes[*w].needs_grad {
                        let rhs = cols.as_deref().unwrap_or_else(|| self.nodes[*x].value.data());
                        let mut dw = vec![0.0f32; cout * kdim];
                        kernels::gemm(cout, hw, kdim, &g, false, rhs, true, 0.0, &mut dw);
                        accumulate(&mut grads[*w], &dw);
                    }
                    if self.nodes[*x].needs_grad {
                        let mut dcols = vec![0.0f32; kdim * hw];
                        kernels::gemm(kdim, cout, hw, self.nodes[*w].value.data(), true, &g, false, 0.0, &mut dcols);
                        if *ks == 1 {
                            accumulate(&mut grads[*x], &dcols);
                        } else {
                            let mut dx = vec![0.0f32; cin * hw];
                            kernels::col2im_add(&dcols, cin, h, wd, *ks, &mut dx);
                            accumulate(&mut grads[*x], &dx);
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let xin = self.nodes[*x].value.numel();
                    let nout = g.len();
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], &g);
                    }
                    if self.nodes[*w].needs_grad {
                        let mut dw = vec![0.0f32; nout * xin];
                        kernels::gemm(nout, 1, xin, &g, false, self.nodes[*x].value.data(), false, 0.0, &mut dw);
                        accumulate(&mut grads[*w], &dw);
                    }
                    if self.nodes[*x].needs_grad {
                        let mut dx = vec![0.0f32; xin];
                        kernels::gemm(xin, nout, 1, self.nodes[*w].value.data(), true, &g, false, 0.0, &mut dx);
                        accumulate(&mut grads[*x], &dx);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    xhat,
                    rstd,
                } => {
                    let (c, h, w) = node.value.chw()?;
                    let mut dgamma = vec![0.0f32; c];
                    let mut dbeta = vec![0.0f32; c];
                    let dx = kernels::group_norm_backward(
                        &g,
                        xhat,
                        rstd,
                        self.nodes[*gamma].value.data(),
                        c,
                        h * w,
                        *groups,
                        &mut dgamma,
                        &mut dbeta,
                        self.nodes[*x].needs_grad,
                    );
                    if self.nodes[*gamma].needs_grad {
                        accumulate(&mut grads[*gamma], &dgamma);
                    }
                    if self.nodes[*beta].needs_grad {
                        accumulate(&mut grads[*beta], &dbeta);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut grads[*x], &dx);
                    }
                }
                Op::Silu { x } => {
                    let dx: Vec<f32> = self.nodes[*x]
                        .value
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| {
                            let s = kernels::sigmoid(v);
                            gv * s * (1.0 + v * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads[*x], &dx);
                }
                Op::Add { a, b } => {
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], &g);
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], &g);
                    }
                }
                Op::ChannelBias { x, bias } => {
                    if self.nodes[*bias].needs_grad {
                        let hw = g.len() / self.nodes[*bias].value.numel();
                        let db: Vec<f32> = g.chunks(hw).map(|c| c.iter().sum()).collect();
                        accumulate(&mut grads[*bias], &db);
                    }
                    if self.nodes[*x].needs_grad {
                        accumulate(&mut grads[*x], &g);
                    }
                }
                Op::ScaleBy { x, s } => {
                    let sv = self.nodes[*s].value.data()[0];
                    if self.nodes[*s].needs_grad {
                        let ds: f64 = self.nodes[*x]
                            .value
                            .data()
                            .iter()
                            .zip(&g)
                            .map(|(&a, &b)| (a * b) as f64)
                            .sum();
                        accumulate(&mut grads[*s], &[ds as f32]);
                    }
                    if self.nodes[*x].needs_grad {
                        let dx: Vec<f32> = g.iter().map(|&v| v * sv).collect();
                        accumulate(&mut grads[*x], &dx);
                    }
                }
                Op::Concat { a, b } => {
                    let na = self.nodes[*a].value.numel();
                    if self.nodes[*a].needs_grad {
                        accumulate(&mut grads[*a], &g[..na]);
                    }
                    if self.nodes[*b].needs_grad {
                        accumulate(&mut grads[*b], &g[na..]);
                    }
                }
                Op::AvgPool2 { x } => {
                    let (c, h, w) = self.nodes[*x].value.chw()?;
                    let dx = kernels::avg_pool2_backward(&g, c, h, w);
                    accumulate(&mut grads[*x], &dx);
                }
                Op::Upsample2 { x } => {
                    let (c, h, w) = self.nodes[*x].value.chw()?;
                    let dx = kernels::upsample2_backward(&g, c, h, w);
                    accumulate(&mut grads[*x], &dx);
                }
                Op::MseTo { x, target } => {
                    let n = target.len() as f32;
                    let scale = 2.0 * g[0] / n;
                    let dx: Vec<f32> = self.nodes[*x]
                        .value
                        .data()
                        .iter()
                        .zip(target)
                        .map(|(&a, &b)| scale * (a - b))
                        .collect();
                    accumulate(&mut grads[*x], &dx);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}
