//! Forward primitives and their hand-derived vector-Jacobian products.
//!
//! Every `*_vjp` takes the upstream gradient `g` (same shape as the forward
//! output) and returns the gradient with respect to the forward inputs.
//! Sums run sequentially over the last axis, so results are bit-reproducible.

use serde::{Deserialize, Serialize};

use super::{Precision, Tensor};
use crate::error::{Error, Result};

/// Default normalization epsilon.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    /// tanh approximation
    Gelu,
}

fn batch_dims(shape: &[usize]) -> (&[usize], usize, usize) {
    let r = shape.len();
    (&shape[..r - 2], shape[r - 2], shape[r - 1])
}

/// Batched matrix product `a[..., m, k] · b[..., k, n]`.
///
/// `b` may also be rank 2, in which case it is shared across every batch of `a`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || b.rank() < 2 {
        return Err(Error::shape("matmul", "operands need rank >= 2"));
    }
    let (a_batch, m, k) = batch_dims(a.shape());
    let (b_batch, k2, n) = batch_dims(b.shape());
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner extents {} vs {}", k, k2)));
    }
    let shared_b = b.rank() == 2;
    if !shared_b && a_batch != b_batch {
        return Err(Error::shape(
            "matmul",
            format!("batch extents {:?} vs {:?}", a_batch, b_batch),
        ));
    }
    let batches: usize = a_batch.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; batches * m * n];
    for bt in 0..batches {
        let a_off = bt * m * k;
        let b_off = if shared_b { 0 } else { bt * k * n };
        let o_off = bt * m * n;
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += ad[a_off + i * k + p] * bd[b_off + p * n + j];
                }
                out[o_off + i * n + j] = acc;
            }
        }
    }
    let mut shape = a_batch.to_vec();
    shape.extend([m, n]);
    Tensor::from_op("matmul", shape, out, a.precision().join(b.precision()))
}

/// Swap the last two axes.
pub fn transpose(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::shape("transpose", "needs rank >= 2"));
    }
    let (batch, m, n) = batch_dims(x.shape());
    let batches: usize = batch.iter().product();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for bt in 0..batches {
        let off = bt * m * n;
        for i in 0..m {
            for j in 0..n {
                out[off + j * m + i] = xd[off + i * n + j];
            }
        }
    }
    let mut shape = batch.to_vec();
    shape.extend([n, m]);
    Tensor::from_op("transpose", shape, out, x.precision())
}

pub fn transpose_vjp(g: &Tensor) -> Result<Tensor> {
    transpose(g)
}

/// Returns `(grad_a, grad_b)`. A shared rank-2 `b` receives the sum over batches.
pub fn matmul_vjp(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let ga = matmul(g, &transpose(b)?)?;
    let gb = if b.rank() == 2 && a.rank() > 2 {
        let (_, m, k) = batch_dims(a.shape());
        let n = g.last_dim();
        let rows = a.numel() / k;
        let a2 = a.reshape(vec![rows, k])?;
        let g2 = g.reshape(vec![rows, n])?;
        debug_assert_eq!(rows % m, 0);
        matmul(&transpose(&a2)?, &g2)?
    } else {
        matmul(&transpose(a)?, g)?
    };
    Ok((ga, gb))
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::shape("softmax", format!("axis {} of {:?}", axis, x.shape())));
    }
    let (outer, n, inner) = axis_layout(x.shape(), axis);
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).fold(f64::NEG_INFINITY, |m, j| m.max(xd[idx(j)]));
            let mut total = 0.0;
            for j in 0..n {
                let e = (xd[idx(j)] - max).exp();
                out[idx(j)] = e;
                total += e;
            }
            for j in 0..n {
                out[idx(j)] /= total;
            }
        }
    }
    Tensor::from_op("softmax", x.shape().to_vec(), out, x.precision())
}

/// Gradient of softmax given its output `y`.
pub fn softmax_vjp(y: &Tensor, g: &Tensor, axis: usize) -> Result<Tensor> {
    if y.shape() != g.shape() || axis >= y.rank() {
        return Err(Error::shape(
            "softmax_vjp",
            format!("{:?} vs {:?}", y.shape(), g.shape()),
        ));
    }
    let (outer, n, inner) = axis_layout(y.shape(), axis);
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let dot = (0..n).fold(0.0, |acc, j| acc + yd[idx(j)] * gd[idx(j)]);
            for j in 0..n {
                out[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
            }
        }
    }
    Tensor::from_op(
        "softmax_vjp",
        y.shape().to_vec(),
        out,
        y.precision().join(g.precision()),
    )
}

/// Row softmax over `[..., P, P]` scores where query `i` only sees keys `j <= i`.
/// Masked probabilities are exactly zero.
pub fn causal_softmax(x: &Tensor) -> Result<Tensor> {
    if x.rank() < 2 {
        return Err(Error::shape("causal_softmax", "needs rank >= 2"));
    }
    let (batch, p, p2) = batch_dims(x.shape());
    if p != p2 {
        return Err(Error::shape("causal_softmax", format!("non-square {:?}", x.shape())));
    }
    let batches: usize = batch.iter().product();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for bt in 0..batches {
        for i in 0..p {
            let row = bt * p * p + i * p;
            let max = (0..=i).fold(f64::NEG_INFINITY, |m, j| m.max(xd[row + j]));
            let mut total = 0.0;
            for j in 0..=i {
                let e = (xd[row + j] - max).exp();
                out[row + j] = e;
                total += e;
            }
            for j in 0..=i {
                out[row + j] /= total;
            }
        }
    }
    Tensor::from_op("causal_softmax", x.shape().to_vec(), out, x.precision())
}

/// Masked entries of `y` are zero, so the plain softmax rule applies unchanged.
pub fn causal_softmax_vjp(y: &Tensor, g: &Tensor) -> Result<Tensor> {
    softmax_vjp(y, g, y.rank() - 1)
}

/// Causal uniform averaging weights `1/(i+1)` for `j <= i`, batched like `shape`.
pub fn causal_uniform(shape: &[usize], precision: Precision) -> Result<Tensor> {
    let (batch, p, _) = batch_dims(shape);
    let batches: usize = batch.iter().product();
    let mut out = vec![0.0; batches * p * p];
    for bt in 0..batches {
        for i in 0..p {
            for j in 0..=i {
                out[bt * p * p + i * p + j] = 1.0 / (i + 1) as f64;
            }
        }
    }
    Tensor::from_op("causal_uniform", shape.to_vec(), out, precision)
}

fn check_affine(op: &'static str, x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<usize> {
    let d = x.last_dim();
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::shape(
            op,
            format!(
                "gain {:?} / bias {:?} for feature dim {}",
                gain.shape(),
                bias.shape(),
                d
            ),
        ));
    }
    Ok(d)
}

/// Per-row statistics: returns `(mean, inverse scale)`; mean is 0 for rmsnorm.
fn norm_stats(row: &[f64], kind: NormKind, eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    match kind {
        NormKind::LayerNorm => {
            let mean = row.iter().fold(0.0, |a, v| a + v) / n;
            let var = row.iter().fold(0.0, |a, v| a + (v - mean) * (v - mean)) / n;
            (mean, 1.0 / (var + eps).sqrt())
        }
        NormKind::RmsNorm => {
            let ms = row.iter().fold(0.0, |a, v| a + v * v) / n;
            (0.0, 1.0 / (ms + eps).sqrt())
        }
    }
}

/// Normalize over the last axis, then apply `gain ⊙ x̂ + bias`.
pub fn normalize(x: &Tensor, kind: NormKind, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = check_affine("normalize", x, gain, bias)?;
    let (gd, bd) = (gain.data(), bias.data());
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.n_rows() {
        let row = x.row(r);
        let (mean, inv) = norm_stats(row, kind, eps);
        for c in 0..d {
            out.push((row[c] - mean) * inv * gd[c] + bd[c]);
        }
    }
    let precision = x.precision().join(gain.precision()).join(bias.precision());
    Tensor::from_op("normalize", x.shape().to_vec(), out, precision)
}

#[derive(Debug, Clone)]
pub struct NormGrads {
    pub input: Tensor,
    pub gain: Tensor,
    pub bias: Tensor,
}

pub fn normalize_vjp(
    x: &Tensor,
    kind: NormKind,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
    g: &Tensor,
) -> Result<NormGrads> {
    let d = check_affine("normalize_vjp", x, gain, bias)?;
    if g.shape() != x.shape() {
        return Err(Error::shape(
            "normalize_vjp",
            format!("{:?} vs {:?}", g.shape(), x.shape()),
        ));
    }
    let gain_d = gain.data();
    let mut dx = Vec::with_capacity(x.numel());
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut xhat = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    let n = d as f64;
    for r in 0..x.n_rows() {
        let row = x.row(r);
        let grow = g.row(r);
        let (mean, inv) = norm_stats(row, kind, eps);
        for c in 0..d {
            xhat[c] = (row[c] - mean) * inv;
            dxhat[c] = grow[c] * gain_d[c];
            dgain[c] += grow[c] * xhat[c];
            dbias[c] += grow[c];
        }
        let mean_dxhat = dxhat.iter().fold(0.0, |a, v| a + v) / n;
        let mean_proj = (0..d).fold(0.0, |a, c| a + dxhat[c] * xhat[c]) / n;
        for c in 0..d {
            let centered = match kind {
                NormKind::LayerNorm => dxhat[c] - mean_dxhat,
                NormKind::RmsNorm => dxhat[c],
            };
            dx.push(inv * (centered - xhat[c] * mean_proj));
        }
    }
    let p = x.precision().join(g.precision());
    Ok(NormGrads {
        input: Tensor::from_op("normalize_vjp", x.shape().to_vec(), dx, p)?,
        gain: Tensor::from_op("normalize_vjp", vec![d], dgain, p)?,
        bias: Tensor::from_op("normalize_vjp", vec![d], dbias, p)?,
    })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn act_value(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Silu => v * sigmoid(v),
        Activation::Gelu => 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()),
    }
}

fn act_deriv(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Silu => {
            let s = sigmoid(v);
            s * (1.0 + v * (1.0 - s))
        }
        Activation::Gelu => {
            let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
            0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v)
        }
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    let out = x.data().iter().map(|&v| act_value(kind, v)).collect();
    Tensor::from_op("activation", x.shape().to_vec(), out, x.precision())
}

pub fn activation_vjp(x: &Tensor, kind: Activation, g: &Tensor) -> Result<Tensor> {
    if x.shape() != g.shape() {
        return Err(Error::shape(
            "activation_vjp",
            format!("{:?} vs {:?}", x.shape(), g.shape()),
        ));
    }
    let out = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&v, &gv)| gv * act_deriv(kind, v))
        .collect();
    Tensor::from_op(
        "activation_vjp",
        x.shape().to_vec(),
        out,
        x.precision().join(g.precision()),
    )
}

pub fn add_vjp(g: &Tensor) -> (Tensor, Tensor) {
    (g.clone(), g.clone())
}

pub fn mul_vjp(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    Ok((g.mul(b)?, g.mul(a)?))
}

/// Gather rows of `table[V, d]` by id.
pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(Error::shape("embedding", format!("table {:?}", table.shape())));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::TokenOutOfRange { token: id, vocab: v });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::from_op("embedding", vec![ids.len(), d], out, table.precision())
}

/// Scatter-add of `g[P, d]` back into a `[V, d]` table gradient.
pub fn embedding_vjp(vocab: usize, ids: &[usize], g: &Tensor) -> Result<Tensor> {
    if g.rank() != 2 || g.shape()[0] != ids.len() {
        return Err(Error::shape(
            "embedding_vjp",
            format!("{:?} for {} ids", g.shape(), ids.len()),
        ));
    }
    let d = g.shape()[1];
    let mut out = vec![0.0; vocab * d];
    for (p, &id) in ids.iter().enumerate() {
        if id >= vocab {
            return Err(Error::TokenOutOfRange { token: id, vocab });
        }
        for c in 0..d {
            out[id * d + c] += g.row(p)[c];
        }
    }
    Tensor::from_op("embedding_vjp", vec![vocab, d], out, g.precision())
}

/// `[P, H*dh] -> [H, P, dh]`
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    if x.rank() != 2 || heads == 0 || !x.shape()[1].is_multiple_of(heads) {
        return Err(Error::shape(
            "split_heads",
            format!("{:?} into {} heads", x.shape(), heads),
        ));
    }
    let (p, width) = (x.shape()[0], x.shape()[1]);
    let dh = width / heads;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for h in 0..heads {
        for t in 0..p {
            for c in 0..dh {
                out[(h * p + t) * dh + c] = xd[t * width + h * dh + c];
            }
        }
    }
    Tensor::from_op("split_heads", vec![heads, p, dh], out, x.precision())
}

/// `[H, P, dh] -> [P, H*dh]`
pub fn merge_heads(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::shape("merge_heads", format!("{:?}", x.shape())));
    }
    let (heads, p, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let width = heads * dh;
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for h in 0..heads {
        for t in 0..p {
            for c in 0..dh {
                out[t * width + h * dh + c] = xd[(h * p + t) * dh + c];
            }
        }
    }
    Tensor::from_op("merge_heads", vec![p, width], out, x.precision())
}

pub fn split_heads_vjp(g: &Tensor) -> Result<Tensor> {
    merge_heads(g)
}

pub fn merge_heads_vjp(g: &Tensor, heads: usize) -> Result<Tensor> {
    split_heads(g, heads)
}

/// Rotary position embedding over `[H, P, dh]` using the rotate-half pairing
/// `(c, c + dh/2)` with frequency `base^(-2c/dh)`. `inverse` rotates backwards,
/// which is also the VJP.
pub fn rotary(x: &Tensor, base: f64, inverse: bool) -> Result<Tensor> {
    if x.rank() != 3 || !x.shape()[2].is_multiple_of(2) {
        return Err(Error::shape("rotary", format!("{:?} needs even head dim", x.shape())));
    }
    let (heads, p, dh) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let half = dh / 2;
    let sign = if inverse { -1.0 } else { 1.0 };
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for h in 0..heads {
        for t in 0..p {
            let off = (h * p + t) * dh;
            for c in 0..half {
                let freq = base.powf(-2.0 * c as f64 / dh as f64);
                let (sin, cos) = (sign * t as f64 * freq).sin_cos();
                let (a, b) = (xd[off + c], xd[off + c + half]);
                out[off + c] = a * cos - b * sin;
                out[off + c + half] = a * sin + b * cos;
            }
        }
    }
    Tensor::from_op("rotary", x.shape().to_vec(), out, x.precision())
}

pub fn rotary_vjp(g: &Tensor, base: f64) -> Result<Tensor> {
    rotary(g, base, true)
}
