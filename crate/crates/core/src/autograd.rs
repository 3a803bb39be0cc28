//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! accumulates gradients for every node that depends on a parameter.
//! Parameters are borrowed from a [`ParamStore`], never copied.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::nn::ParamStore;
use crate::tensor::{Scalar, TensorBuf};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Input,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, F),
    Silu(Var),
    /// `[n, k] · [k, m]`
    MatMul(Var, Var),
    /// adds `[c]` along the last axis
    AddBias(Var, Var),
    /// adds `[b, c]` to every spatial position of `[b, c, ...]`
    AddChannel(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        means: Vec<F>,
        rstds: Vec<F>,
    },
    Upsample2x(Var),
    ConcatChannels(Var, Var),
    /// `[b, c, s] -> [b, s, c]`, and back with `inverse`
    Transpose12 {
        x: Var,
        inverse: bool,
    },
    Reshape(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<F>,
    },
    MeanSpatial(Var),
    Mse {
        pred: Var,
        target: TensorBuf<F>,
    },
    SumSquares(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

struct Node<'p, F: Scalar> {
    value: Cow<'p, TensorBuf<F>>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<'p, F: Scalar> {
    nodes: Vec<Node<'p, F>>,
    grad_enabled: bool,
    macs: u64,
}

impl<'p, F: Scalar> Default for Graph<'p, F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients indexed like the store they came from.
pub struct Gradients<F: Scalar> {
    pub grads: Vec<Option<TensorBuf<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: usize) -> Option<&TensorBuf<F>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Global gradient L2 norm.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| {
                let n = g.norm_f64();
                n * n
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            macs: 0,
        }
    }

    /// A tape that records values only; `backward` is unavailable.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Multiply-adds executed by matmul, convolution and attention so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &TensorBuf<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn into_value(mut self, v: Var) -> TensorBuf<F> {
        let node = self.nodes.swap_remove(v.0);
        node.value.into_owned()
    }

    fn push(&mut self, value: TensorBuf<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: TensorBuf<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input_ref(&mut self, value: &'p TensorBuf<F>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &'p ParamStore<F>, id: usize) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(store.tensor(id)),
            op: Op::Param(id),
            needs_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x / (F::one() + (-x).exp()));
        self.push(out, Op::Silu(a), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(&[sa.first().copied().unwrap_or(0), sb[0]], sa));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut out = TensorBuf::zeros(vec![n, m]);
        F::gemm(
            n,
            k,
            m,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            out.data_mut(),
            false,
        );
        self.macs += (n * k * m) as u64;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&0);
        self.value(bias).ensure_shape(&[c])?;
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(c) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn add_channel(&mut self, x: Var, e: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c) = (shape[0], shape[1]);
        self.value(e).ensure_shape(&[b, c])?;
        let spatial: usize = shape[2..].iter().product();
        let mut out = self.value(x).clone();
        let ev = self.value(e).data();
        for (i, chunk) in out.data_mut().chunks_mut(spatial).enumerate() {
            let add = ev[i];
            chunk.iter_mut().for_each(|v| *v += add);
        }
        Ok(self.push(out, Op::AddChannel(x, e), &[x, e]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(Error::shape(&ws, &xs));
        }
        let geom = ConvGeom {
            c_in: xs[1],
            c_out: ws[0],
            h: xs[2],
            w: xs[3],
            kernel: ws[2],
            stride,
            pad,
        };
        let mut out = TensorBuf::zeros(vec![xs[0], geom.c_out, geom.out_h(), geom.out_w()]);
        kernels::conv2d_forward(
            &geom,
            xs[0],
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            out.data_mut(),
        );
        self.macs += geom.macs() * xs[0] as u64;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (b, c) = (shape[0], shape[1]);
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!(
                "{c} channels not divisible into {groups} groups"
            )));
        }
        let spatial: usize = shape[2..].iter().product();
        let mut out = TensorBuf::zeros(shape.clone());
        let (means, rstds) = kernels::group_norm_forward(
            b,
            c,
            spatial,
            groups,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            out.data_mut(),
        );
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                means,
                rstds,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let (h, w) = (s[2], s[3]);
        let src = self.value(x);
        let out = TensorBuf::from_fn(vec![s[0], s[1], 2 * h, 2 * w], |i| {
            let ox = i % (2 * w);
            let oy = (i / (2 * w)) % (2 * h);
            let bc = i / (4 * h * w);
            src.data()[(bc * h + oy / 2) * w + ox / 2]
        });
        self.push(out, Op::Upsample2x(x), &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape(&sa, &sb));
        }
        let spatial: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * spatial, sb[1] * spatial);
        let mut data = Vec::with_capacity(sa[0] * (ca + cb));
        for i in 0..sa[0] {
            data.extend_from_slice(&self.value(a).data()[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&self.value(b).data()[i * cb..(i + 1) * cb]);
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        let out = TensorBuf::new(shape, data)?;
        Ok(self.push(out, Op::ConcatChannels(a, b), &[a, b]))
    }

    fn transpose12_value(value: &TensorBuf<F>, rows: usize, cols: usize) -> TensorBuf<F> {
        let b = value.batch();
        let mut out = TensorBuf::zeros(vec![b, cols, rows]);
        for i in 0..b {
            let src = value.item(i);
            let dst = out.item_mut(i);
            for r in 0..rows {
                for c in 0..cols {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
        out
    }

    /// `[b, c, h, w] -> [b, h·w, c]`
    pub fn to_tokens(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let spatial: usize = s[2..].iter().product();
        let out = Self::transpose12_value(self.value(x), s[1], spatial);
        self.push(out, Op::Transpose12 { x, inverse: false }, &[x])
    }

    /// `[b, h·w, c] -> [b, c, h, w]`
    pub fn from_tokens(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] != h * w {
            return Err(Error::shape(&[s[0], h * w, s[2]], &s));
        }
        let out = Self::transpose12_value(self.value(x), s[1], s[2]).reshape(vec![s[0], s[2], h, w])?;
        Ok(self.push(out, Op::Transpose12 { x, inverse: true }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let s = self.shape(q).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(&[0, 0, 0], &s));
        }
        self.value(k).ensure_shape(&s)?;
        self.value(v).ensure_shape(&s)?;
        let (b, t, d) = (s[0], s[1], s[2]);
        let mut out = TensorBuf::zeros(s.clone());
        let probs = kernels::attention_forward(
            b,
            t,
            d,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            out.data_mut(),
        );
        self.macs += (2 * b * t * t * d) as u64;
        let probs = if self.grad_enabled { probs } else { Vec::new() };
        Ok(self.push(out, Op::Attention { q, k, v, probs }, &[q, k, v]))
    }

    /// `[b, c, ...] -> [b, c]` averaging over trailing axes.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        let spatial: usize = s[2..].iter().product();
        let inv = F::one() / F::of(spatial as f64);
        let data = self
            .value(x)
            .data()
            .chunks(spatial)
            .map(|c| c.iter().copied().sum::<F>() * inv)
            .collect();
        let out = TensorBuf::new(vec![s[0], s[1]], data).expect("consistent shape");
        self.push(out, Op::MeanSpatial(x), &[x])
    }

    /// Mean over all elements of `(pred − target)²`.
    pub fn mse(&mut self, pred: Var, target: TensorBuf<F>) -> Result<Var> {
        self.value(pred).ensure_same_shape(&target)?;
        let n = target.len().max(1) as f64;
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| {
                let d = (*p - *t).as_f64();
                d * d
            })
            .sum::<f64>()
            / n;
        Ok(self.push(TensorBuf::scalar(F::of(loss)), Op::Mse { pred, target }, &[pred]))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| *v * *v).sum();
        self.push(TensorBuf::scalar(s), Op::SumSquares(x), &[x])
    }

    /// Mean softmax cross-entropy of `[b, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape(&[labels.len(), 0], &s));
        }
        let classes = s[1];
        let mut probs = vec![F::zero(); s[0] * classes];
        let mut loss = 0.0;
        for (i, row) in self.value(logits).data().chunks(classes).enumerate() {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let exps: Vec<F> = row.iter().map(|v| (*v - max).exp()).collect();
            let sum: F = exps.iter().copied().sum();
            for (c, e) in exps.iter().enumerate() {
                probs[i * classes + c] = *e / sum;
            }
            let label = labels[i];
            if label >= classes {
                return Err(Error::domain(format!("label {label} >= {classes} classes")));
            }
            loss -= (probs[i * classes + label].as_f64()).max(1e-300).ln();
        }
        loss /= s[0].max(1) as f64;
        Ok(self.push(
            TensorBuf::scalar(F::of(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Back-propagates from a scalar node and returns per-parameter gradients.
    pub fn backward(&self, loss: Var, param_count: usize) -> Result<Gradients<F>> {
        if !self.grad_enabled {
            return Err(Error::config("backward on an inference-only graph"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(&[], self.shape(loss)));
        }
        let mut grads: Vec<Option<TensorBuf<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(TensorBuf::full(self.shape(loss).to_vec(), F::one()));
        let mut out = Gradients {
            grads: (0..param_count).map(|_| None).collect(),
        };

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<TensorBuf<F>>>, to: Var, g: TensorBuf<F>| {
                if !self.nodes[to.0].needs_grad {
                    return;
                }
                match &mut grads[to.0] {
                    Some(acc) => acc.axpy(F::one(), &g).expect("gradient shape"),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    match &mut out.grads[*id] {
                        Some(acc) => acc.axpy(F::one(), &gy)?,
                        slot @ None => *slot = Some(gy),
                    }
                }
                Op::Add(a, b) => {
                    send(&mut grads, *b, gy.clone());
                    send(&mut grads, *a, gy);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, gy.scale(-F::one()));
                    send(&mut grads, *a, gy);
                }
                Op::Scale(a, s) => send(&mut grads, *a, gy.scale(*s)),
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let g = gy
                        .zip_map(x, |g, x| {
                            let sig = F::one() / (F::one() + (-x).exp());
                            g * sig * (F::one() + x * (F::one() - sig))
                        })
                        .expect("silu shape");
                    send(&mut grads, *a, g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if self.nodes[a.0].needs_grad {
                        let mut ga = TensorBuf::zeros(vec![n, k]);
                        F::gemm(n, m, k, gy.data(), false, bv.data(), true, ga.data_mut(), false);
                        send(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let mut gb = TensorBuf::zeros(vec![k, m]);
                        F::gemm(k, n, m, av.data(), true, gy.data(), false, gb.data_mut(), false);
                        send(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(x, bias) => {
                    let c = self.value(*bias).len();
                    let mut gb = TensorBuf::zeros(vec![c]);
                    for row in gy.data().chunks(c) {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(&mut grads, *bias, gb);
                    send(&mut grads, *x, gy);
                }
                Op::AddChannel(x, e) => {
                    let es = self.shape(*e).to_vec();
                    let spatial = gy.len() / (es[0] * es[1]);
                    let ge = TensorBuf::new(
                        es,
                        gy.data()
                            .chunks(spatial)
                            .map(|c| c.iter().copied().sum())
                            .collect(),
                    )?;
                    send(&mut grads, *e, ge);
                    send(&mut grads, *x, gy);
                }
                Op::Conv2d { x, w, b, geom } => {
                    let batch = self.shape(*x)[0];
                    let mut gw = TensorBuf::zeros(self.shape(*w).to_vec());
                    let mut gb = TensorBuf::zeros(self.shape(*b).to_vec());
                    let mut gx = if self.nodes[x.0].needs_grad {
                        Some(TensorBuf::zeros(self.shape(*x).to_vec()))
                    } else {
                        None
                    };
                    kernels::conv2d_backward(
                        geom,
                        batch,
                        self.value(*x).data(),
                        self.value(*w).data(),
                        gy.data(),
                        gx.as_mut().map(|g| g.data_mut()),
                        gw.data_mut(),
                        gb.data_mut(),
                    );
                    send(&mut grads, *w, gw);
                    send(&mut grads, *b, gb);
                    if let Some(gx) = gx {
                        send(&mut grads, *x, gx);
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    means,
                    rstds,
                } => {
                    let s = self.shape(*x).to_vec();
                    let spatial: usize = s[2..].iter().product();
                    let mut gg = TensorBuf::zeros(vec![s[1]]);
                    let mut gbeta = TensorBuf::zeros(vec![s[1]]);
                    let mut gx = if self.nodes[x.0].needs_grad {
                        Some(TensorBuf::zeros(s.clone()))
                    } else {
                        None
                    };
                    kernels::group_norm_backward(
                        s[0],
                        s[1],
                        spatial,
                        *groups,
                        self.value(*x).data(),
                        self.value(*gamma).data(),
                        means,
                        rstds,
                        gy.data(),
                        gx.as_mut().map(|g| g.data_mut()),
                        gg.data_mut(),
                        gbeta.data_mut(),
                    );
                    send(&mut grads, *gamma, gg);
                    send(&mut grads, *beta, gbeta);
                    if let Some(gx) = gx {
                        send(&mut grads, *x, gx);
                    }
                }
                Op::Upsample2x(x) => {
                    let s = self.shape(*x).to_vec();
                    let (h, w) = (s[2], s[3]);
                    let mut gx = TensorBuf::zeros(s);
                    for (i, &g) in gy.data().iter().enumerate() {
                        let ox = i % (2 * w);
                        let oy = (i / (2 * w)) % (2 * h);
                        let bc = i / (4 * h * w);
                        gx.data_mut()[(bc * h + oy / 2) * w + ox / 2] += g;
                    }
                    send(&mut grads, *x, gx);
                }
                Op::ConcatChannels(a, b) => {
                    let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                    let spatial: usize = sa[2..].iter().product();
                    let (ca, cb) = (sa[1] * spatial, sb[1] * spatial);
                    let mut ga = Vec::with_capacity(sa[0] * ca);
                    let mut gb = Vec::with_capacity(sa[0] * cb);
                    for chunk in gy.data().chunks(ca + cb) {
                        ga.extend_from_slice(&chunk[..ca]);
                        gb.extend_from_slice(&chunk[ca..]);
                    }
                    send(&mut grads, *a, TensorBuf::new(sa, ga)?);
                    send(&mut grads, *b, TensorBuf::new(sb, gb)?);
                }
                Op::Transpose12 { x, inverse } => {
                    let xs = self.shape(*x).to_vec();
                    let g = if *inverse {
                        // forward: [b, s, c] -> [b, c, s]; gradient goes back to [b, s, c]
                        let c = xs[2];
                        let s = xs[1];
                        Self::transpose12_value(&gy, c, s)
                    } else {
                        let spatial: usize = xs[2..].iter().product();
                        Self::transpose12_value(&gy, spatial, xs[1])
                    }
                    .reshape(xs)?;
                    send(&mut grads, *x, g);
                }
                Op::Reshape(x) => {
                    let g = gy.reshape(self.shape(*x).to_vec())?;
                    send(&mut grads, *x, g);
                }
                Op::Attention { q, k, v, probs } => {
                    let s = self.shape(*q).to_vec();
                    let mut gq = TensorBuf::zeros(s.clone());
                    let mut gk = TensorBuf::zeros(s.clone());
                    let mut gv = TensorBuf::zeros(s.clone());
                    kernels::attention_backward(
                        s[0],
                        s[1],
                        s[2],
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                        probs,
                        gy.data(),
                        gq.data_mut(),
                        gk.data_mut(),
                        gv.data_mut(),
                    );
                    send(&mut grads, *q, gq);
                    send(&mut grads, *k, gk);
                    send(&mut grads, *v, gv);
                }
                Op::MeanSpatial(x) => {
                    let s = self.shape(*x).to_vec();
                    let spatial: usize = s[2..].iter().product();
                    let inv = F::one() / F::of(spatial as f64);
                    let gx = TensorBuf::from_fn(s, |i| gy.data()[i / spatial] * inv);
                    send(&mut grads, *x, gx);
                }
                Op::Mse { pred, target } => {
                    let scale = gy.data()[0] * F::of(2.0 / target.len().max(1) as f64);
                    let g = self
                        .value(*pred)
                        .zip_map(target, |p, t| (p - t) * scale)
                        .expect("mse shape");
                    send(&mut grads, *pred, g);
                }
                Op::SumSquares(x) => {
                    let s = gy.data()[0] * F::of(2.0);
                    send(&mut grads, *x, self.value(*x).scale(s));
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let s = self.shape(*logits).to_vec();
                    let classes = s[1];
                    let scale = gy.data()[0] / F::of(s[0].max(1) as f64);
                    let mut g = TensorBuf::new(s, probs.clone())?;
                    for (i, &l) in labels.iter().enumerate() {
                        g.data_mut()[i * classes + l] -= F::one();
                    }
                    send(&mut grads, *logits, g.scale(scale));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    /// Central-difference check of every parameter entry for a scalar function
    /// built on the tape.
    fn check(
        store: &mut ParamStore<f64>,
        f: impl for<'p> Fn(&mut Graph<'p, f64>, &'p ParamStore<f64>) -> Var,
    ) {
        let analytic = {
            let snapshot = store.clone();
            let mut g = Graph::new();
            let loss = f(&mut g, &snapshot);
            g.backward(loss, snapshot.len()).unwrap()
        };
        let eval = |s: &ParamStore<f64>| {
            let mut g = Graph::inference();
            let l = f(&mut g, s);
            g.value(l).data()[0]
        };
        let h = 1e-6;
        for id in 0..store.len() {
            for j in 0..store.tensor(id).len() {
                let orig = store.tensor(id).data()[j];
                store.tensor_mut(id).data_mut()[j] = orig + h;
                let up = eval(store);
                store.tensor_mut(id).data_mut()[j] = orig - h;
                let down = eval(store);
                store.tensor_mut(id).data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = analytic.get(id).map(|g| g.data()[j]).unwrap_or(0.0);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-5, "param {id}[{j}]: analytic {an} vs fd {fd}");
            }
        }
    }

    fn wave(shape: Vec<usize>, phase: f64) -> TensorBuf<f64> {
        TensorBuf::from_fn(shape, |i| ((i as f64 + 1.0) * 0.731 + phase).sin() * 0.8)
    }

    #[test]
    fn conv_groupnorm_silu_gradients() {
        let mut store = ParamStore::new();
        let x = store.push("x", wave(vec![2, 4, 5, 5], 0.1));
        let w = store.push("w", wave(vec![4, 4, 3, 3], 0.2));
        let b = store.push("b", wave(vec![4], 0.3));
        let gam = store.push("gamma", wave(vec![4], 0.4).map(|v| v + 1.0));
        let bet = store.push("beta", wave(vec![4], 0.5));
        check(&mut store, |g, s| {
            let xv = g.param(s, x);
            let wv = g.param(s, w);
            let bv = g.param(s, b);
            let c = g.conv2d(xv, wv, bv, 2, 1).unwrap();
            let gm = g.param(s, gam);
            let bt = g.param(s, bet);
            let n = g.group_norm(c, gm, bt, 2).unwrap();
            let a = g.silu(n);
            let u = g.upsample2x(a);
            let t = wave(vec![2, 4, 6, 6], 0.9);
            g.mse(u, t).unwrap()
        });
    }

    #[test]
    fn attention_token_and_concat_gradients() {
        let mut store = ParamStore::new();
        let x = store.push("x", wave(vec![2, 3, 2, 2], 0.1));
        let y = store.push("y", wave(vec![2, 3, 2, 2], 0.7));
        let wq = store.push("wq", wave(vec![6, 6], 0.2));
        let e = store.push("e", wave(vec![2, 6], 0.3));
        check(&mut store, |g, s| {
            let xv = g.param(s, x);
            let yv = g.param(s, y);
            let cat = g.concat_channels(xv, yv).unwrap();
            let ev = g.param(s, e);
            let cat = g.add_channel(cat, ev).unwrap();
            let tok = g.to_tokens(cat);
            let flat = g.reshape(tok, vec![8, 6]).unwrap();
            let w = g.param(s, wq);
            let q = g.matmul(flat, w).unwrap();
            let q = g.reshape(q, vec![2, 4, 6]).unwrap();
            let att = g.attention(q, tok, tok).unwrap();
            let back = g.from_tokens(att, 2, 2).unwrap();
            let pooled = g.mean_spatial(back);
            let sq = g.sum_squares(pooled);
            let sub = g.sub(sq, sq).unwrap();
            let sc = g.scale(sq, 0.5);
            g.add(sub, sc).unwrap()
        });
    }

    #[test]
    fn cross_entropy_gradient() {
        let mut store = ParamStore::new();
        let w = store.push("w", wave(vec![3, 4], 0.2));
        let bias = store.push("b", wave(vec![4], 0.6));
        check(&mut store, |g, s| {
            let x = g.input(wave(vec![5, 3], 0.1));
            let wv = g.param(s, w);
            let l = g.matmul(x, wv).unwrap();
            let bv = g.param(s, bias);
            let l = g.add_bias(l, bv).unwrap();
            g.cross_entropy(l, &[0, 1, 2, 3, 1]).unwrap()
        });
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let mut g: Graph<f64> = Graph::inference();
        let x = g.input(TensorBuf::scalar(1.0));
        let l = g.sum_squares(x);
        assert!(g.backward(l, 0).is_err());
    }

    #[test]
    fn macs_are_counted() {
        let mut store = ParamStore::new();
        let w = store.push("w", TensorBuf::<f64>::zeros(vec![3, 4]));
        let mut g = Graph::inference();
        let x = g.input(TensorBuf::zeros(vec![5, 3]));
        let wv = g.param(&store, w);
        g.matmul(x, wv).unwrap();
        assert_eq!(g.macs(), 60);
    }
}
