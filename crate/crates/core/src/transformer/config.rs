use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{Activation, NormKind, NORM_EPS};
use crate::tensor::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    None,
    LearnedAbsolute,
    Rotary,
}

fn default_eps() -> f64 {
    NORM_EPS
}

fn default_rope_base() -> f64 {
    10_000.0
}

/// Architecture hyperparameters. Serialized as the `__config__` entry of a
/// model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_heads: usize,
    /// Query/key width of a single head.
    pub d_query: usize,
    /// Total value width across heads, `n_heads * d_value`.
    pub d_attn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub norm_kind: NormKind,
    pub activation: Activation,
    pub positional_encoding: PositionalEncoding,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_eps")]
    pub norm_eps: f64,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

impl ModelConfig {
    /// Small layernorm/SiLU/learned-position model used throughout the tests.
    pub fn tiny(n_layers: usize, d_model: usize, n_heads: usize, vocab_size: usize) -> Self {
        ModelConfig {
            n_layers,
            d_model,
            d_ff: 2 * d_model,
            n_heads,
            d_query: d_model / n_heads,
            d_attn: d_model,
            vocab_size,
            max_positions: 64,
            norm_kind: NormKind::LayerNorm,
            activation: Activation::Silu,
            positional_encoding: PositionalEncoding::LearnedAbsolute,
            precision: Precision::F64,
            norm_eps: NORM_EPS,
            rope_base: default_rope_base(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_layers < 1 {
            return fail("n_layers must be >= 1".into());
        }
        for (name, v) in [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("n_heads", self.n_heads),
            ("d_query", self.d_query),
            ("d_attn", self.d_attn),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.d_attn.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_attn {} not divisible by n_heads {}",
                self.d_attn, self.n_heads
            ));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be >= 2".into());
        }
        if self.max_positions < 1 {
            return fail("max_positions must be >= 1".into());
        }
        if self.positional_encoding == PositionalEncoding::Rotary && !self.d_query.is_multiple_of(2) {
            return fail("rotary encoding needs an even d_query".into());
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return fail("norm_eps must be positive".into());
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return fail("rope_base must be positive".into());
        }
        Ok(())
    }

    /// Value width of a single head.
    pub fn d_value(&self) -> usize {
        self.d_attn / self.n_heads
    }

    /// Every weight tensor name with its shape, in canonical order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, q) = (self.d_model, self.d_query * self.n_heads);
        let mut out = vec![("embed".to_string(), vec![self.vocab_size, d])];
        if self.positional_encoding == PositionalEncoding::LearnedAbsolute {
            out.push(("positions".into(), vec![self.max_positions, d]));
        }
        for l in 0..self.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("attn_norm.gain"), vec![d]),
                (p("attn_norm.bias"), vec![d]),
                (p("wq"), vec![d, q]),
                (p("wk"), vec![d, q]),
                (p("wv"), vec![d, self.d_attn]),
                (p("wo"), vec![self.d_attn, d]),
                (p("ffn_norm.gain"), vec![d]),
                (p("ffn_norm.bias"), vec![d]),
                (p("w_gate"), vec![d, self.d_ff]),
                (p("w_up"), vec![d, self.d_ff]),
                (p("w_down"), vec![self.d_ff, d]),
            ]);
        }
        out.push(("final_norm.gain".into(), vec![d]));
        out.push(("final_norm.bias".into(), vec![d]));
        out
    }
}
