//! Test-only oracles: central finite differences and a straight-line
//! transformer evaluator that shares no code with the library's forward pass.

#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use csc::tensor::ops::{Activation, NormKind};
use csc::tensor::Tensor;
use csc::transformer::{ModelConfig, ModelWeights, PositionalEncoding};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut StdRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut StdRng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), random_vec(rng, n, scale)).unwrap()
}

/// Central differences of a scalar function at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(|r| r.to_vec()).collect()
}

fn vecf(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn norm_rows(x: &Mat, kind: NormKind, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = match kind {
                NormKind::LayerNorm => row.iter().sum::<f64>() / n,
                NormKind::RmsNorm => 0.0,
            };
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) * inv * gain[c] + bias[c])
                .collect()
        })
        .collect()
}

fn act(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Silu => v / (1.0 + (-v).exp()),
        Activation::Gelu => 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh()),
    }
}

fn rope(vec: &mut [f64], pos: usize, base: f64) {
    let d = vec.len();
    let half = d / 2;
    for c in 0..half {
        let angle = pos as f64 / base.powf(2.0 * c as f64 / d as f64);
        let (a, b) = (vec[c], vec[c + half]);
        vec[c] = a * angle.cos() - b * angle.sin();
        vec[c + half] = a * angle.sin() + b * angle.cos();
    }
}

/// Logits `[P][V]` computed position by position with plain loops.
pub fn reference_logits(w: &ModelWeights, tokens: &[usize]) -> Mat {
    let cfg: &ModelConfig = &w.config;
    let emb = mat(&w.embed);
    let mut h: Mat = tokens.iter().map(|&t| emb[t].clone()).collect();
    if let Some(pos) = &w.positions {
        let pos = mat(pos);
        for (p, row) in h.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += pos[p][c];
            }
        }
    }
    let n = tokens.len();
    let (heads, dq, dv) = (cfg.n_heads, cfg.d_query, cfg.d_attn / cfg.n_heads);
    for lw in &w.layers {
        let x = norm_rows(
            &h,
            cfg.norm_kind,
            &vecf(&lw.attn_norm.gain),
            &vecf(&lw.attn_norm.bias),
            cfg.norm_eps,
        );
        let q = mm(&x, &mat(&lw.wq));
        let k = mm(&x, &mat(&lw.wk));
        let v = mm(&x, &mat(&lw.wv));
        let mut ctx = vec![vec![0.0; cfg.d_attn]; n];
        for hd in 0..heads {
            let head = |m: &Mat, p: usize, width: usize| m[p][hd * width..(hd + 1) * width].to_vec();
            for i in 0..n {
                let mut qi = head(&q, i, dq);
                if cfg.positional_encoding == PositionalEncoding::Rotary {
                    rope(&mut qi, i, cfg.rope_base);
                }
                let mut scores = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let mut kj = head(&k, j, dq);
                    if cfg.positional_encoding == PositionalEncoding::Rotary {
                        rope(&mut kj, j, cfg.rope_base);
                    }
                    let s: f64 = qi.iter().zip(&kj).map(|(a, b)| a * b).sum();
                    scores.push(s / (dq as f64).sqrt());
                }
                let max = scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let vj = head(&v, j, dv);
                    for c in 0..dv {
                        ctx[i][hd * dv + c] += e / z * vj[c];
                    }
                }
            }
        }
        let o = mm(&ctx, &mat(&lw.wo));
        for i in 0..n {
            for c in 0..cfg.d_model {
                h[i][c] += o[i][c];
            }
        }
        let x = norm_rows(
            &h,
            cfg.norm_kind,
            &vecf(&lw.ffn_norm.gain),
            &vecf(&lw.ffn_norm.bias),
            cfg.norm_eps,
        );
        let gate = mm(&x, &mat(&lw.w_gate));
        let up = mm(&x, &mat(&lw.w_up));
        let hidden: Mat = gate
            .iter()
            .zip(&up)
            .map(|(g, u)| g.iter().zip(u).map(|(a, b)| act(cfg.activation, *a) * b).collect())
            .collect();
        let o = mm(&hidden, &mat(&lw.w_down));
        for i in 0..n {
            for c in 0..cfg.d_model {
                h[i][c] += o[i][c];
            }
        }
    }
    let x = norm_rows(
        &h,
        cfg.norm_kind,
        &vecf(&w.final_norm.gain),
        &vecf(&w.final_norm.bias),
        cfg.norm_eps,
    );
    x.iter()
        .map(|row| {
            emb.iter()
                .map(|e| row.iter().zip(e).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

/// Standard seeded test configuration: L=2, d_model=16, two heads, V=11.
pub fn small_config() -> ModelConfig {
    ModelConfig::tiny(2, 16, 2, 11)
}

pub fn config_variants() -> Vec<ModelConfig> {
    let base = small_config();
    let mut rms = base.clone();
    rms.norm_kind = NormKind::RmsNorm;
    rms.activation = Activation::Gelu;
    rms.positional_encoding = PositionalEncoding::Rotary;
    let mut plain = base.clone();
    plain.positional_encoding = PositionalEncoding::None;
    plain.d_query = 3;
    plain.d_attn = 10;
    vec![base, rms, plain]
}
