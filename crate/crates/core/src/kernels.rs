//! Forward and backward kernels for the layer types the backbones use.
//!
//! Layouts are NCHW for images and `[batch, tokens, channels]` for attention.
//! Each backward function returns or accumulates into gradient buffers of the
//! same layout as its forward inputs.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn out_spatial(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Multiply-adds for one image.
    pub fn macs(&self) -> u64 {
        (self.c_out * self.patch() * self.out_spatial()) as u64
    }
}

fn im2col<F: Scalar>(g: &ConvGeom, x: &[F], cols: &mut [F]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * ow + ox] = if iy >= 0
                            && ix >= 0
                            && (iy as usize) < g.h
                            && (ix as usize) < g.w
                        {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<F: Scalar>(g: &ConvGeom, cols: &[F], dx: &mut [F]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for c in 0..g.c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        dx[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1 && g.pad == 0
}

/// `y[b] = W · im2col(x[b]) + bias`, weights `[c_out, c_in, k, k]`.
pub fn conv2d_forward<F: Scalar>(
    g: &ConvGeom,
    batch: usize,
    x: &[F],
    weight: &[F],
    bias: &[F],
    y: &mut [F],
) {
    let in_len = g.c_in * g.h * g.w;
    let os = g.out_spatial();
    let out_len = g.c_out * os;
    let mut cols = if is_pointwise(g) {
        Vec::new()
    } else {
        vec![F::zero(); g.patch() * os]
    };
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let yb = &mut y[b * out_len..(b + 1) * out_len];
        for (co, row) in yb.chunks_mut(os).enumerate() {
            row.iter_mut().for_each(|v| *v = bias[co]);
        }
        let src: &[F] = if is_pointwise(g) {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        F::gemm(g.c_out, g.patch(), os, weight, false, src, false, yb, true);
    }
}

/// Accumulates weight/bias gradients and (optionally) the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<F: Scalar>(
    g: &ConvGeom,
    batch: usize,
    x: &[F],
    weight: &[F],
    dy: &[F],
    dx: Option<&mut [F]>,
    dweight: &mut [F],
    dbias: &mut [F],
) {
    let in_len = g.c_in * g.h * g.w;
    let os = g.out_spatial();
    let out_len = g.c_out * os;
    let pointwise = is_pointwise(g);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![F::zero(); g.patch() * os]
    };
    let mut dcols = vec![F::zero(); g.patch() * os];
    let mut dx = dx;
    for b in 0..batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        for (co, row) in dyb.chunks(os).enumerate() {
            dbias[co] += row.iter().copied().sum();
        }
        let src: &[F] = if pointwise {
            xb
        } else {
            im2col(g, xb, &mut cols);
            &cols
        };
        // dW += dy · colsᵀ
        F::gemm(g.c_out, os, g.patch(), dyb, false, src, true, dweight, true);
        if let Some(dx) = dx.as_deref_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if pointwise {
                F::gemm(g.patch(), g.c_out, os, weight, true, dyb, false, dxb, true);
            } else {
                F::gemm(g.patch(), g.c_out, os, weight, true, dyb, false, &mut dcols, false);
                col2im_add(g, &dcols, dxb);
            }
        }
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization over `[batch, channels, spatial]`; returns per-(b, group)
/// mean and reciprocal standard deviation for the backward pass.
#[allow(clippy::too_many_arguments)]
pub fn group_norm_forward<F: Scalar>(
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    x: &[F],
    gamma: &[F],
    beta: &[F],
    y: &mut [F],
) -> (Vec<F>, Vec<F>) {
    let cpg = channels / groups;
    let n = (cpg * spatial) as f64;
    let eps = F::of(GROUP_NORM_EPS);
    let mut means = Vec::with_capacity(batch * groups);
    let mut rstds = Vec::with_capacity(batch * groups);
    for b in 0..batch {
        for gi in 0..groups {
            let start = (b * channels + gi * cpg) * spatial;
            let xs = &x[start..start + cpg * spatial];
            let mean = F::of(xs.iter().map(|v| v.as_f64()).sum::<f64>() / n);
            let var = F::of(
                xs.iter()
                    .map(|v| {
                        let d = (*v - mean).as_f64();
                        d * d
                    })
                    .sum::<f64>()
                    / n,
            );
            let rstd = F::one() / (var + eps).sqrt();
            for c in 0..cpg {
                let ch = gi * cpg + c;
                let off = start + c * spatial;
                for s in 0..spatial {
                    y[off + s] = (x[off + s] - mean) * rstd * gamma[ch] + beta[ch];
                }
            }
            means.push(mean);
            rstds.push(rstd);
        }
    }
    (means, rstds)
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<F: Scalar>(
    batch: usize,
    channels: usize,
    spatial: usize,
    groups: usize,
    x: &[F],
    gamma: &[F],
    means: &[F],
    rstds: &[F],
    dy: &[F],
    dx: Option<&mut [F]>,
    dgamma: &mut [F],
    dbeta: &mut [F],
) {
    let cpg = channels / groups;
    let n = F::of((cpg * spatial) as f64);
    let mut dx = dx;
    for b in 0..batch {
        for gi in 0..groups {
            let idx = b * groups + gi;
            let (mean, rstd) = (means[idx], rstds[idx]);
            let start = (b * channels + gi * cpg) * spatial;
            let mut sum_dxhat = F::zero();
            let mut sum_dxhat_xhat = F::zero();
            for c in 0..cpg {
                let ch = gi * cpg + c;
                let off = start + c * spatial;
                for s in 0..spatial {
                    let xhat = (x[off + s] - mean) * rstd;
                    let d = dy[off + s];
                    dgamma[ch] += d * xhat;
                    dbeta[ch] += d;
                    let dxhat = d * gamma[ch];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                let m1 = sum_dxhat / n;
                let m2 = sum_dxhat_xhat / n;
                for c in 0..cpg {
                    let ch = gi * cpg + c;
                    let off = start + c * spatial;
                    for s in 0..spatial {
                        let xhat = (x[off + s] - mean) * rstd;
                        let dxhat = dy[off + s] * gamma[ch];
                        dx[off + s] += rstd * (dxhat - m1 - xhat * m2);
                    }
                }
            }
        }
    }
}

/// Single-head scaled dot-product attention over `[batch, tokens, dim]`.
/// Returns the softmax probabilities `[batch, tokens, tokens]`.
pub fn attention_forward<F: Scalar>(
    batch: usize,
    tokens: usize,
    dim: usize,
    q: &[F],
    k: &[F],
    v: &[F],
    out: &mut [F],
) -> Vec<F> {
    let scale = F::one() / F::of(dim as f64).sqrt();
    let td = tokens * dim;
    let tt = tokens * tokens;
    let mut probs = vec![F::zero(); batch * tt];
    for b in 0..batch {
        let p = &mut probs[b * tt..(b + 1) * tt];
        F::gemm(
            tokens,
            dim,
            tokens,
            &q[b * td..(b + 1) * td],
            false,
            &k[b * td..(b + 1) * td],
            true,
            p,
            false,
        );
        for row in p.chunks_mut(tokens) {
            let mut max = F::neg_infinity();
            for v in row.iter_mut() {
                *v *= scale;
                if *v > max {
                    max = *v;
                }
            }
            let mut sum = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        F::gemm(
            tokens,
            tokens,
            dim,
            p,
            false,
            &v[b * td..(b + 1) * td],
            false,
            &mut out[b * td..(b + 1) * td],
            false,
        );
    }
    probs
}

#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Scalar>(
    batch: usize,
    tokens: usize,
    dim: usize,
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let scale = F::one() / F::of(dim as f64).sqrt();
    let td = tokens * dim;
    let tt = tokens * tokens;
    let mut dp = vec![F::zero(); tt];
    for b in 0..batch {
        let p = &probs[b * tt..(b + 1) * tt];
        let dob = &dout[b * td..(b + 1) * td];
        // dV += Pᵀ dO ; dP = dO Vᵀ
        F::gemm(tokens, tokens, dim, p, true, dob, false, &mut dv[b * td..(b + 1) * td], true);
        F::gemm(tokens, dim, tokens, dob, false, &v[b * td..(b + 1) * td], true, &mut dp, false);
        // dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the score scale
        for (prow, dprow) in p.chunks(tokens).zip(dp.chunks_mut(tokens)) {
            let dot: F = prow.iter().zip(dprow.iter()).map(|(a, b)| *a * *b).sum();
            for (d, &pv) in dprow.iter_mut().zip(prow) {
                *d = pv * (*d - dot) * scale;
            }
        }
        F::gemm(tokens, tokens, dim, &dp, false, &k[b * td..(b + 1) * td], false, &mut dq[b * td..(b + 1) * td], true);
        F::gemm(tokens, tokens, dim, &dp, true, &q[b * td..(b + 1) * td], false, &mut dk[b * td..(b + 1) * td], true);
    }
}
