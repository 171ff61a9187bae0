// SPDX-License-Identifier: MIT OR Apache-2.0

//! Slice-level numerical kernels shared by the value API and the autodiff tape.
//!
//! Everything here is row-major. Reductions (means, variances, log-sum-exp)
//! accumulate in `f64` regardless of the element type.

use crate::scalar::{MatRef, Scalar};

pub const NORM_EPS: f64 = 1e-5;
pub const ROPE_BASE: f64 = 10_000.0;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub fn all_finite<S: Scalar>(data: &[S]) -> bool {
    data.iter().all(|v| v.is_finite())
}

/// `c = a * b` for dense row-major operands.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::zero(); m * n];
    S::gemm_raw(
        MatRef::row_major(a, m, k),
        MatRef::row_major(b, k, n),
        S::zero(),
        &mut c,
        n,
    );
    c
}

/// Numerically stable softmax over `len` contiguous elements spaced `stride` apart.
fn softmax_strided<S: Scalar>(data: &mut [S], start: usize, len: usize, stride: usize) {
    let mut max = f64::NEG_INFINITY;
    for i in 0..len {
        max = max.max(data[start + i * stride].f64());
    }
    let mut sum = 0.0f64;
    for i in 0..len {
        let e = (data[start + i * stride].f64() - max).exp();
        sum += e;
        data[start + i * stride] = S::of(e);
    }
    for i in 0..len {
        let idx = start + i * stride;
        data[idx] = S::of(data[idx].f64() / sum);
    }
}

/// Softmax along the middle axis of an `(outer, axis, inner)` decomposition.
pub fn softmax_axis<S: Scalar>(data: &mut [S], outer: usize, axis: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            softmax_strided(data, o * axis * inner + i, axis, inner);
        }
    }
}

pub fn softmax_rows<S: Scalar>(data: &mut [S], cols: usize) {
    let rows = data.len() / cols;
    softmax_axis(data, rows, cols, 1);
}

/// Gradient of row softmax: `dx = p * (dy - <dy, p>)`.
pub fn softmax_rows_backward<S: Scalar>(probs: &[S], dy: &[S], dx: &mut [S], cols: usize) {
    for ((p, g), out) in probs.chunks(cols).zip(dy.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a.f64() * b.f64()).sum();
        for j in 0..cols {
            out[j] = out[j] + S::of(p[j].f64() * (g[j].f64() - dot));
        }
    }
}

/// Root-mean-square over every element.
pub fn rms<S: Scalar>(data: &[S]) -> f64 {
    let ss: f64 = data.iter().map(|v| v.f64() * v.f64()).sum();
    (ss / data.len() as f64).sqrt()
}

/// Per-row statistics cached by the normalization kernels.
#[derive(Debug, Clone, Default)]
pub struct NormCache {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm<S: Scalar>(x: &[S], gain: &[S], bias: Option<&[S]>, cols: usize) -> (Vec<S>, NormCache) {
    let rows = x.len() / cols;
    let mut y = vec![S::zero(); x.len()];
    let mut cache = NormCache {
        mean: Vec::with_capacity(rows),
        rstd: Vec::with_capacity(rows),
    };
    for (xr, yr) in x.chunks(cols).zip(y.chunks_mut(cols)) {
        let mean = xr.iter().map(|v| v.f64()).sum::<f64>() / cols as f64;
        let var = xr.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / cols as f64;
        let rstd = 1.0 / (var + NORM_EPS).sqrt();
        for j in 0..cols {
            let xhat = (xr[j].f64() - mean) * rstd;
            let b = bias.map_or(0.0, |b| b[j].f64());
            yr[j] = S::of(xhat * gain[j].f64() + b);
        }
        cache.mean.push(mean);
        cache.rstd.push(rstd);
    }
    (y, cache)
}

/// Accumulates layer-norm gradients into `dx`, `dgain`, `dbias` (any may be absent).
pub fn layer_norm_backward<S: Scalar>(
    x: &[S],
    gain: &[S],
    cache: &NormCache,
    dy: &[S],
    cols: usize,
    mut dx: Option<&mut [S]>,
    mut dgain: Option<&mut [S]>,
    mut dbias: Option<&mut [S]>,
) {
    for (r, (xr, gr)) in x.chunks(cols).zip(dy.chunks(cols)).enumerate() {
        let (mean, rstd) = (cache.mean[r], cache.rstd[r]);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..cols {
            let xhat = (xr[j].f64() - mean) * rstd;
            let d = gr[j].f64() * gain[j].f64();
            sum_d += d;
            sum_dx += d * xhat;
            if let Some(dg) = dgain.as_deref_mut() {
                dg[j] = dg[j] + S::of(gr[j].f64() * xhat);
            }
            if let Some(db) = dbias.as_deref_mut() {
                db[j] = db[j] + gr[j];
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let n = cols as f64;
            for j in 0..cols {
                let xhat = (xr[j].f64() - mean) * rstd;
                let d = gr[j].f64() * gain[j].f64();
                let v = rstd * (d - sum_d / n - xhat * sum_dx / n);
                let idx = r * cols + j;
                dx[idx] = dx[idx] + S::of(v);
            }
        }
    }
}

pub fn rms_norm<S: Scalar>(x: &[S], gain: &[S], cols: usize) -> (Vec<S>, NormCache) {
    let rows = x.len() / cols;
    let mut y = vec![S::zero(); x.len()];
    let mut cache = NormCache {
        mean: Vec::new(),
        rstd: Vec::with_capacity(rows),
    };
    for (xr, yr) in x.chunks(cols).zip(y.chunks_mut(cols)) {
        let ms = xr.iter().map(|v| v.f64() * v.f64()).sum::<f64>() / cols as f64;
        let rstd = 1.0 / (ms + NORM_EPS).sqrt();
        for j in 0..cols {
            yr[j] = S::of(xr[j].f64() * rstd * gain[j].f64());
        }
        cache.rstd.push(rstd);
    }
    (y, cache)
}

pub fn rms_norm_backward<S: Scalar>(
    x: &[S],
    gain: &[S],
    cache: &NormCache,
    dy: &[S],
    cols: usize,
    mut dx: Option<&mut [S]>,
    mut dgain: Option<&mut [S]>,
) {
    for (r, (xr, gr)) in x.chunks(cols).zip(dy.chunks(cols)).enumerate() {
        let rstd = cache.rstd[r];
        let mut sum_dx = 0.0;
        for j in 0..cols {
            let xhat = xr[j].f64() * rstd;
            let d = gr[j].f64() * gain[j].f64();
            sum_dx += d * xhat;
            if let Some(dg) = dgain.as_deref_mut() {
                dg[j] = dg[j] + S::of(gr[j].f64() * xhat);
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let n = cols as f64;
            for j in 0..cols {
                let xhat = xr[j].f64() * rstd;
                let d = gr[j].f64() * gain[j].f64();
                let idx = r * cols + j;
                dx[idx] = dx[idx] + S::of(rstd * (d - xhat * sum_dx / n));
            }
        }
    }
}

/// Tanh-approximated GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    let v = x.f64();
    S::of(0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let v = x.f64();
    let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
    S::of(0.5 * (1.0 + t) + 0.5 * v * dt)
}

/// Rotary position embedding applied in place to a `(batch*seq, heads*head_dim)`
/// matrix. `sign = -1.0` applies the inverse rotation (used for gradients).
pub fn rope_inplace<S: Scalar>(data: &mut [S], batch: usize, seq: usize, heads: usize, head_dim: usize, sign: f64) {
    let d = heads * head_dim;
    let half = head_dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| ROPE_BASE.powf(-2.0 * i as f64 / head_dim as f64))
        .collect();
    for b in 0..batch {
        for t in 0..seq {
            let row = &mut data[(b * seq + t) * d..(b * seq + t + 1) * d];
            for (i, f) in freqs.iter().enumerate() {
                let angle = sign * t as f64 * f;
                let (s, c) = angle.sin_cos();
                for h in 0..heads {
                    let base = h * head_dim + 2 * i;
                    let (x0, x1) = (row[base].f64(), row[base + 1].f64());
                    row[base] = S::of(x0 * c - x1 * s);
                    row[base + 1] = S::of(x0 * s + x1 * c);
                }
            }
        }
    }
}

/// Shape of a multi-head causal attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnShape {
    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }

    fn block(&self, b: usize, h: usize) -> usize {
        b * self.seq * self.d_model() + h * self.head_dim
    }
}

/// Causal scaled dot-product attention. Inputs and output are
/// `(batch*seq, d_model)` with heads laid out as contiguous column blocks.
/// Returns `(per-head outputs, attention probabilities)`; the probabilities
/// are `(batch, heads, seq, seq)` with zeros above the diagonal.
pub fn causal_attention<S: Scalar>(q: &[S], k: &[S], v: &[S], shape: AttnShape) -> (Vec<S>, Vec<S>) {
    let AttnShape {
        batch,
        seq,
        heads,
        head_dim,
    } = shape;
    let d = shape.d_model();
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut out = vec![S::zero(); batch * seq * d];
    let mut probs = vec![S::zero(); batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = shape.block(b, h);
            let qv = MatRef::strided(&q[off..], seq, head_dim, d, 1);
            let kv = MatRef::strided(&k[off..], seq, head_dim, d, 1);
            let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            S::gemm_raw(qv, kv.t(), S::zero(), p, seq);
            for i in 0..seq {
                let row = &mut p[i * seq..(i + 1) * seq];
                let mut max = f64::NEG_INFINITY;
                for x in row.iter().take(i + 1) {
                    max = max.max(x.f64() * scale);
                }
                let mut sum = 0.0;
                for x in row.iter_mut().take(i + 1) {
                    let e = (x.f64() * scale - max).exp();
                    sum += e;
                    *x = S::of(e);
                }
                for (j, x) in row.iter_mut().enumerate() {
                    *x = if j <= i { S::of(x.f64() / sum) } else { S::zero() };
                }
            }
            let vv = MatRef::strided(&v[off..], seq, head_dim, d, 1);
            S::gemm_raw(MatRef::row_major(p, seq, seq), vv, S::zero(), &mut out[off..], d);
        }
    }
    (out, probs)
}

/// Accumulates attention gradients into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_backward<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    probs: &[S],
    dout: &[S],
    shape: AttnShape,
    dq: &mut [S],
    dk: &mut [S],
    dv: &mut [S],
) {
    let AttnShape {
        batch,
        seq,
        heads,
        head_dim,
    } = shape;
    let d = shape.d_model();
    let scale = S::of(1.0 / (head_dim as f64).sqrt());
    let mut dp = vec![S::zero(); seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = shape.block(b, h);
            let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            let pm = MatRef::row_major(p, seq, seq);
            let dov = MatRef::strided(&dout[off..], seq, head_dim, d, 1);
            let vv = MatRef::strided(&v[off..], seq, head_dim, d, 1);
            // dV += P^T dO
            S::gemm_raw(pm.t(), dov, S::one(), &mut dv[off..], d);
            // dP = dO V^T, then softmax backward in place -> dS
            S::gemm_raw(dov, vv.t(), S::zero(), &mut dp, seq);
            for i in 0..seq {
                let pr = &p[i * seq..(i + 1) * seq];
                let gr = &mut dp[i * seq..(i + 1) * seq];
                let dot: f64 = pr
                    .iter()
                    .zip(gr.iter())
                    .take(i + 1)
                    .map(|(a, b)| a.f64() * b.f64())
                    .sum();
                for j in 0..seq {
                    gr[j] = if j <= i {
                        S::of(pr[j].f64() * (gr[j].f64() - dot)) * scale
                    } else {
                        S::zero()
                    };
                }
            }
            let ds = MatRef::row_major(&dp, seq, seq);
            let kv = MatRef::strided(&k[off..], seq, head_dim, d, 1);
            let qv = MatRef::strided(&q[off..], seq, head_dim, d, 1);
            S::gemm_raw(ds, kv, S::one(), &mut dq[off..], d);
            S::gemm_raw(ds.t(), qv, S::one(), &mut dk[off..], d);
        }
    }
}

/// Replaces head `head` of every row with the mean of the other heads.
pub fn mean_of_other_heads<S: Scalar>(x: &[S], heads: usize, head: usize, head_dim: usize) -> Vec<S> {
    let d = heads * head_dim;
    let mut out = x.to_vec();
    let denom = S::of((heads - 1) as f64);
    for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
        for c in 0..head_dim {
            let mut acc = S::zero();
            for j in (0..heads).filter(|&j| j != head) {
                acc = acc + xr[j * head_dim + c];
            }
            or[head * head_dim + c] = acc / denom;
        }
    }
    out
}

pub fn mean_of_other_heads_backward<S: Scalar>(dy: &[S], heads: usize, head: usize, head_dim: usize, dx: &mut [S]) {
    let d = heads * head_dim;
    let denom = S::of((heads - 1) as f64);
    for (gr, xr) in dy.chunks(d).zip(dx.chunks_mut(d)) {
        for j in (0..heads).filter(|&j| j != head) {
            for c in 0..head_dim {
                let share = gr[head * head_dim + c] / denom;
                xr[j * head_dim + c] = xr[j * head_dim + c] + gr[j * head_dim + c] + share;
            }
        }
    }
}

/// Mean token-level negative log-likelihood and the per-row softmax.
pub fn cross_entropy<S: Scalar>(logits: &[S], targets: &[usize], vocab: usize) -> (f64, Vec<S>) {
    let mut probs = logits.to_vec();
    softmax_rows(&mut probs, vocab);
    let mut total = 0.0;
    for (r, &t) in logits.chunks(vocab).zip(targets) {
        let max = r.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = r.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln() + max;
        total += lse - r[t].f64();
    }
    (total / targets.len() as f64, probs)
}
