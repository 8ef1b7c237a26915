use std::collections::BTreeMap;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Norm,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_norm: Norm,
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

/// All learned tensors of a model. The unembedding reuses `embed` transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub embed: Tensor,
    pub positions: Option<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Norm,
}

impl ModelWeights {
    /// Build weights by asking `init` for every tensor named in
    /// [`ModelConfig::tensor_shapes`], in canonical order.
    pub fn from_fn(config: ModelConfig, mut init: impl FnMut(&str, &[usize]) -> Result<Tensor>) -> Result<Self> {
        config.validate()?;
        let mut named = BTreeMap::new();
        for (name, shape) in config.tensor_shapes() {
            let t = init(&name, &shape)?;
            named.insert(name, t);
        }
        Self::from_named(config, named)
    }

    /// Assemble from a name → tensor map, checking that every expected tensor
    /// is present with the right shape and nothing unexpected is left over.
    pub fn from_named(config: ModelConfig, mut named: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        for (name, shape) in config.tensor_shapes() {
            match named.get(&name) {
                None => return Err(Error::MissingTensor(name)),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Inconsistent(format!(
                        "tensor {name} has shape {:?}, config implies {:?}",
                        t.shape(),
                        shape
                    )))
                }
                Some(_) => {}
            }
        }
        let precision = config.precision;
        let mut take = |name: String| -> Tensor {
            named
                .remove(&name)
                .expect("presence checked above")
                .with_precision(precision)
        };
        let embed = take("embed".into());
        let positions = config
            .tensor_shapes()
            .iter()
            .any(|(n, _)| n == "positions")
            .then(|| take("positions".into()));
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let mut t = |s: &str| take(format!("layers.{l}.{s}"));
            layers.push(LayerWeights {
                attn_norm: Norm {
                    gain: t("attn_norm.gain"),
                    bias: t("attn_norm.bias"),
                },
                wq: t("wq"),
                wk: t("wk"),
                wv: t("wv"),
                wo: t("wo"),
                ffn_norm: Norm {
                    gain: t("ffn_norm.gain"),
                    bias: t("ffn_norm.bias"),
                },
                w_gate: t("w_gate"),
                w_up: t("w_up"),
                w_down: t("w_down"),
            });
        }
        let final_norm = Norm {
            gain: take("final_norm.gain".into()),
            bias: take("final_norm.bias".into()),
        };
        if let Some(extra) = named.keys().next() {
            return Err(Error::Inconsistent(format!("unexpected tensor {extra}")));
        }
        Ok(ModelWeights {
            config,
            embed,
            positions,
            layers,
            final_norm,
        })
    }

    /// Canonical (name, tensor) pairs, matching [`ModelConfig::tensor_shapes`].
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        if let Some(p) = &self.positions {
            out.push(("positions".into(), p));
        }
        for (l, w) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("attn_norm.gain"), &w.attn_norm.gain),
                (p("attn_norm.bias"), &w.attn_norm.bias),
                (p("wq"), &w.wq),
                (p("wk"), &w.wk),
                (p("wv"), &w.wv),
                (p("wo"), &w.wo),
                (p("ffn_norm.gain"), &w.ffn_norm.gain),
                (p("ffn_norm.bias"), &w.ffn_norm.bias),
                (p("w_gate"), &w.w_gate),
                (p("w_up"), &w.w_up),
                (p("w_down"), &w.w_down),
            ]);
        }
        out.push(("final_norm.gain".into(), &self.final_norm.gain));
        out.push(("final_norm.bias".into(), &self.final_norm.bias));
        out
    }

    pub fn with_precision(&self, precision: Precision) -> Result<Self> {
        let mut config = self.config.clone();
        config.precision = precision;
        let named = self.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        Self::from_named(config, named)
    }

    /// Projection matrices zero, norm gains one, biases zero; only the
    /// embedding is kept from `embed`.
    pub fn zero_branches(config: ModelConfig, embed: Tensor) -> Result<Self> {
        let precision = config.precision;
        Self::from_fn(config, |name, shape| {
            if name == "embed" {
                Ok(embed.clone())
            } else if name.ends_with(".gain") {
                Tensor::new(shape.to_vec(), vec![1.0; shape.iter().product()], precision)
            } else {
                Ok(Tensor::zeros(shape.to_vec(), precision))
            }
        })
    }
}
