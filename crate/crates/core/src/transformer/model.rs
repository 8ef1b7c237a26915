use std::sync::atomic::{AtomicUsize, Ordering};

use super::config::PositionalEncoding;
use super::loss::LossSpec;
use super::weights::{LayerWeights, ModelWeights, Norm};
use crate::error::{Error, Result};
use crate::graph::{Destination, Source};
use crate::tensor::ops::{self, Activation};
use crate::tensor::Tensor;

/// How branch internals are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchMode {
    #[default]
    Standard,
    /// Every branch is a fixed linear map of its input: normalization is the
    /// identity, attention uses causal uniform weights and the FFN drops its
    /// gate (`O = X W_up W_down`).
    LinearSurrogate,
}

/// Modification of one destination's branch input for a single forward pass.
/// The residual stream itself is never changed.
#[derive(Debug, Clone, Default)]
pub enum Intervention {
    #[default]
    None,
    /// Add `delta` to the input read by `destination`.
    Perturb { destination: usize, delta: Tensor },
    /// Replace the input `H` read by `destination` with `H - fraction * O_source`.
    Ablate {
        source: usize,
        destination: usize,
        fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forward: usize,
    pub backward: usize,
}

#[derive(Debug, Clone)]
struct AttnCache {
    input: Tensor,
    normed: Tensor,
    /// post-rotary, `[H, P, d_query]`
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Tensor,
}

#[derive(Debug, Clone)]
struct FfnCache {
    input: Tensor,
    normed: Tensor,
    gate: Tensor,
    up: Tensor,
    act: Tensor,
}

#[derive(Debug, Clone)]
struct ReadoutCache {
    input: Tensor,
}

/// Everything one forward pass recorded for a single sequence, plus the
/// branch-input gradients once [`Transformer::backward`] has run.
#[derive(Debug, Clone)]
pub struct ExecutionTape {
    tokens: Vec<usize>,
    /// `[H0, O_attn^1, O_ffn^1, ..., O_attn^L, O_ffn^L]`, indexed like graph sources.
    outputs: Vec<Tensor>,
    /// `[H^(0), H^(1), ..., H^(2L)]`
    residuals: Vec<Tensor>,
    logits: Tensor,
    attn: Vec<AttnCache>,
    ffn: Vec<FfnCache>,
    readout: ReadoutCache,
    ablated: bool,
    branch_grads: Option<Vec<Tensor>>,
    loss: Option<f64>,
}

impl ExecutionTape {
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn n_layers(&self) -> usize {
        self.attn.len()
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn embedding(&self) -> &Tensor {
        &self.outputs[0]
    }

    /// 1-based layer.
    pub fn attn_output(&self, layer: usize) -> &Tensor {
        &self.outputs[Source::Attn(layer).index()]
    }

    pub fn ffn_output(&self, layer: usize) -> &Tensor {
        &self.outputs[Source::Ffn(layer).index()]
    }

    /// Output of the source node at graph index `index`.
    pub fn source_output(&self, index: usize) -> &Tensor {
        &self.outputs[index]
    }

    /// Residual state `H^(j)` for `j` in `0..=2L`.
    pub fn residual(&self, j: usize) -> &Tensor {
        &self.residuals[j]
    }

    /// The input actually read by the branch at destination index `index`.
    pub fn branch_input(&self, index: usize) -> &Tensor {
        let l = self.n_layers();
        match Destination::from_index(index, l) {
            Destination::AttnIn(layer) => &self.attn[layer - 1].input,
            Destination::FfnIn(layer) => &self.ffn[layer - 1].input,
            Destination::Readout => &self.readout.input,
        }
    }

    pub fn branch_grads(&self) -> Result<&[Tensor]> {
        self.branch_grads
            .as_deref()
            .ok_or(Error::MissingTape("branch gradients (run backward first)"))
    }

    pub fn branch_grad(&self, destination: usize) -> Result<&Tensor> {
        self.branch_grads()?
            .get(destination)
            .ok_or(Error::MissingTape("destination gradient"))
    }

    pub fn loss(&self) -> Option<f64> {
        self.loss
    }
}

/// Read-only view of a model that runs forward and backward passes and counts
/// them. Safe to share across threads.
#[derive(Debug)]
pub struct Transformer<'w> {
    weights: &'w ModelWeights,
    mode: BranchMode,
    forwards: AtomicUsize,
    backwards: AtomicUsize,
}

impl<'w> Transformer<'w> {
    pub fn new(weights: &'w ModelWeights) -> Self {
        Self::with_mode(weights, BranchMode::Standard)
    }

    pub fn linear_surrogate(weights: &'w ModelWeights) -> Self {
        Self::with_mode(weights, BranchMode::LinearSurrogate)
    }

    pub fn with_mode(weights: &'w ModelWeights, mode: BranchMode) -> Self {
        Transformer {
            weights,
            mode,
            forwards: AtomicUsize::new(0),
            backwards: AtomicUsize::new(0),
        }
    }

    pub fn weights(&self) -> &'w ModelWeights {
        self.weights
    }

    pub fn mode(&self) -> BranchMode {
        self.mode
    }

    pub fn pass_counts(&self) -> PassCounts {
        PassCounts {
            forward: self.forwards.load(Ordering::Relaxed),
            backward: self.backwards.load(Ordering::Relaxed),
        }
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ExecutionTape> {
        self.forward_with(tokens, &Intervention::None)
    }

    pub fn forward_with(&self, tokens: &[usize], intervention: &Intervention) -> Result<ExecutionTape> {
        let w = self.weights;
        let cfg = &w.config;
        let n_dest = 2 * cfg.n_layers + 1;
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if tokens.len() > cfg.max_positions {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: cfg.max_positions,
            });
        }
        match intervention {
            Intervention::None => {}
            Intervention::Perturb { destination, delta } => {
                if *destination >= n_dest || delta.shape() != [tokens.len(), cfg.d_model] {
                    return Err(Error::shape(
                        "perturb",
                        format!("destination {destination}, delta {:?}", delta.shape()),
                    ));
                }
            }
            Intervention::Ablate {
                source, destination, ..
            } => {
                if *destination >= n_dest || source > destination {
                    return Err(Error::InvalidEdge {
                        source_name: format!("#{source}"),
                        destination: format!("#{destination}"),
                    });
                }
            }
        }

        let mut h0 = ops::embedding(&w.embed, tokens)?;
        if let Some(table) = &w.positions {
            let positions: Vec<usize> = (0..tokens.len()).collect();
            h0 = h0.add(&ops::embedding(table, &positions)?)?;
        }
        let mut outputs = vec![h0.clone()];
        let mut residuals = vec![h0.clone()];
        let mut residual = h0;
        let mut attn = Vec::with_capacity(cfg.n_layers);
        let mut ffn = Vec::with_capacity(cfg.n_layers);

        for (li, lw) in w.layers.iter().enumerate() {
            let x = branch_input(2 * li, &residual, &outputs, intervention)?;
            let (o, cache) = self.attention(lw, x)?;
            residual = residual.add(&o)?;
            residuals.push(residual.clone());
            outputs.push(o);
            attn.push(cache);

            let x = branch_input(2 * li + 1, &residual, &outputs, intervention)?;
            let (o, cache) = self.feed_forward(lw, x)?;
            residual = residual.add(&o)?;
            residuals.push(residual.clone());
            outputs.push(o);
            ffn.push(cache);
        }

        let x = branch_input(2 * cfg.n_layers, &residual, &outputs, intervention)?;
        let normed = self.norm(&x, &w.final_norm)?;
        let logits = ops::matmul(&normed, &ops::transpose(&w.embed)?)?;

        self.forwards.fetch_add(1, Ordering::Relaxed);
        Ok(ExecutionTape {
            tokens: tokens.to_vec(),
            outputs,
            residuals,
            logits,
            attn,
            ffn,
            readout: ReadoutCache { input: x },
            ablated: matches!(intervention, Intervention::Ablate { .. }),
            branch_grads: None,
            loss: None,
        })
    }

    /// One reverse sweep that fills the gradient of `loss` with respect to each
    /// destination's branch input, through that branch only. Returns the loss.
    pub fn backward(&self, tape: &mut ExecutionTape, loss: &LossSpec) -> Result<f64> {
        if tape.ablated {
            return Err(Error::MissingTape("unablated forward"));
        }
        let w = self.weights;
        let n_layers = w.config.n_layers;
        if tape.attn.len() != n_layers || tape.ffn.len() != n_layers {
            return Err(Error::MissingTape("layer caches"));
        }
        let (value, dlogits) = loss.value_and_grad(&tape.logits)?;

        let dnormed = ops::matmul(&dlogits, &w.embed)?;
        let g_readout = self.norm_vjp(&tape.readout.input, &w.final_norm, &dnormed)?;

        let mut grads: Vec<Option<Tensor>> = vec![None; 2 * n_layers + 1];
        let mut stream = g_readout.clone();
        grads[2 * n_layers] = Some(g_readout);
        for li in (0..n_layers).rev() {
            let lw = &w.layers[li];
            let g_ffn = self.feed_forward_vjp(lw, &tape.ffn[li], &stream)?;
            stream = stream.add(&g_ffn)?;
            grads[2 * li + 1] = Some(g_ffn);

            let g_attn = self.attention_vjp(lw, &tape.attn[li], &stream)?;
            stream = stream.add(&g_attn)?;
            grads[2 * li] = Some(g_attn);
        }

        tape.branch_grads = Some(grads.into_iter().map(|g| g.expect("filled")).collect());
        tape.loss = Some(value);
        self.backwards.fetch_add(1, Ordering::Relaxed);
        Ok(value)
    }

    fn norm(&self, x: &Tensor, norm: &Norm) -> Result<Tensor> {
        match self.mode {
            BranchMode::Standard => {
                let cfg = &self.weights.config;
                ops::normalize(x, cfg.norm_kind, &norm.gain, &norm.bias, cfg.norm_eps)
            }
            BranchMode::LinearSurrogate => Ok(x.clone()),
        }
    }

    fn norm_vjp(&self, x: &Tensor, norm: &Norm, g: &Tensor) -> Result<Tensor> {
        match self.mode {
            BranchMode::Standard => {
                let cfg = &self.weights.config;
                Ok(ops::normalize_vjp(x, cfg.norm_kind, &norm.gain, &norm.bias, cfg.norm_eps, g)?.input)
            }
            BranchMode::LinearSurrogate => Ok(g.clone()),
        }
    }

    fn rotary(&self) -> Option<f64> {
        let cfg = &self.weights.config;
        (cfg.positional_encoding == PositionalEncoding::Rotary).then_some(cfg.rope_base)
    }

    fn attention(&self, lw: &LayerWeights, input: Tensor) -> Result<(Tensor, AttnCache)> {
        let cfg = &self.weights.config;
        let heads = cfg.n_heads;
        let normed = self.norm(&input, &lw.attn_norm)?;
        let mut q = ops::split_heads(&ops::matmul(&normed, &lw.wq)?, heads)?;
        let mut k = ops::split_heads(&ops::matmul(&normed, &lw.wk)?, heads)?;
        let v = ops::split_heads(&ops::matmul(&normed, &lw.wv)?, heads)?;
        if let Some(base) = self.rotary() {
            q = ops::rotary(&q, base, false)?;
            k = ops::rotary(&k, base, false)?;
        }
        let p = input.shape()[0];
        let probs = match self.mode {
            BranchMode::Standard => {
                let scores = ops::matmul(&q, &ops::transpose(&k)?)?.scale(1.0 / (cfg.d_query as f64).sqrt())?;
                ops::causal_softmax(&scores)?
            }
            BranchMode::LinearSurrogate => ops::causal_uniform(&[heads, p, p], input.precision())?,
        };
        let ctx = ops::merge_heads(&ops::matmul(&probs, &v)?)?;
        let out = ops::matmul(&ctx, &lw.wo)?;
        Ok((
            out,
            AttnCache {
                input,
                normed,
                q,
                k,
                v,
                probs,
            },
        ))
    }

    fn attention_vjp(&self, lw: &LayerWeights, cache: &AttnCache, g_out: &Tensor) -> Result<Tensor> {
        let cfg = &self.weights.config;
        let heads = cfg.n_heads;
        let dctx = ops::merge_heads_vjp(&ops::matmul(g_out, &ops::transpose(&lw.wo)?)?, heads)?;
        let (dprobs, dv) = ops::matmul_vjp(&cache.probs, &cache.v, &dctx)?;
        let mut dnormed = ops::matmul(&ops::split_heads_vjp(&dv)?, &ops::transpose(&lw.wv)?)?;
        if self.mode == BranchMode::Standard {
            let dscores = ops::causal_softmax_vjp(&cache.probs, &dprobs)?.scale(1.0 / (cfg.d_query as f64).sqrt())?;
            let kt = ops::transpose(&cache.k)?;
            let (mut dq, dkt) = ops::matmul_vjp(&cache.q, &kt, &dscores)?;
            let mut dk = ops::transpose_vjp(&dkt)?;
            if let Some(base) = self.rotary() {
                dq = ops::rotary_vjp(&dq, base)?;
                dk = ops::rotary_vjp(&dk, base)?;
            }
            dnormed = dnormed
                .add(&ops::matmul(&ops::split_heads_vjp(&dq)?, &ops::transpose(&lw.wq)?)?)?
                .add(&ops::matmul(&ops::split_heads_vjp(&dk)?, &ops::transpose(&lw.wk)?)?)?;
        }
        debug_assert_eq!(dnormed.shape(), cache.normed.shape());
        self.norm_vjp(&cache.input, &lw.attn_norm, &dnormed)
    }

    fn feed_forward(&self, lw: &LayerWeights, input: Tensor) -> Result<(Tensor, FfnCache)> {
        let normed = self.norm(&input, &lw.ffn_norm)?;
        let gate = ops::matmul(&normed, &lw.w_gate)?;
        let up = ops::matmul(&normed, &lw.w_up)?;
        let (act, hidden) = match self.mode {
            BranchMode::Standard => {
                let act = ops::activation(&gate, self.activation())?;
                let hidden = act.mul(&up)?;
                (act, hidden)
            }
            BranchMode::LinearSurrogate => (gate.clone(), up.clone()),
        };
        let out = ops::matmul(&hidden, &lw.w_down)?;
        Ok((
            out,
            FfnCache {
                input,
                normed,
                gate,
                up,
                act,
            },
        ))
    }

    fn feed_forward_vjp(&self, lw: &LayerWeights, cache: &FfnCache, g_out: &Tensor) -> Result<Tensor> {
        let dhidden = ops::matmul(g_out, &ops::transpose(&lw.w_down)?)?;
        let dnormed = match self.mode {
            BranchMode::Standard => {
                let (dact, dup) = ops::mul_vjp(&cache.act, &cache.up, &dhidden)?;
                let dgate = ops::activation_vjp(&cache.gate, self.activation(), &dact)?;
                ops::matmul(&dgate, &ops::transpose(&lw.w_gate)?)?
                    .add(&ops::matmul(&dup, &ops::transpose(&lw.w_up)?)?)?
            }
            BranchMode::LinearSurrogate => ops::matmul(&dhidden, &ops::transpose(&lw.w_up)?)?,
        };
        debug_assert_eq!(dnormed.shape(), cache.normed.shape());
        self.norm_vjp(&cache.input, &lw.ffn_norm, &dnormed)
    }

    fn activation(&self) -> Activation {
        self.weights.config.activation
    }
}

fn branch_input(
    destination: usize,
    residual: &Tensor,
    outputs: &[Tensor],
    intervention: &Intervention,
) -> Result<Tensor> {
    match intervention {
        Intervention::Perturb { destination: d, delta } if *d == destination => residual.add(delta),
        Intervention::Ablate {
            source,
            destination: d,
            fraction,
        } if *d == destination => residual.add_scaled(&outputs[*source], -fraction),
        _ => Ok(residual.clone()),
    }
}
