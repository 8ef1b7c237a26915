use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean negative log-likelihood of the realized tokens.
    SelfEntropy,
    /// `-(1/T) Σ logit[s_t]`: the self-entropy with the log-partition term
    /// dropped, so the loss is linear in the logits.
    LinearLogit,
}

/// Which logit rows are scored, against which targets.
///
/// Row `start_row + t` is scored against `targets[t]` for `t < targets.len()`;
/// the loss is normalized by `targets.len()` and multiplied by `scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub start_row: usize,
    pub targets: Vec<usize>,
    pub scale: f64,
}

impl LossSpec {
    pub fn self_entropy(start_row: usize, targets: Vec<usize>) -> Self {
        LossSpec {
            kind: LossKind::SelfEntropy,
            start_row,
            targets,
            scale: 1.0,
        }
    }

    pub fn with_kind(mut self, kind: LossKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn check(&self, logits: &Tensor) -> Result<(usize, usize)> {
        if logits.rank() != 2 {
            return Err(Error::shape("loss", format!("logits {:?}", logits.shape())));
        }
        let (rows, vocab) = (logits.shape()[0], logits.shape()[1]);
        let t = self.targets.len();
        let available = rows.saturating_sub(self.start_row);
        if t == 0 || t > available {
            return Err(Error::TruncationOutOfRange { t_cut: t, available });
        }
        if let Some(&bad) = self.targets.iter().find(|&&s| s >= vocab) {
            return Err(Error::TokenOutOfRange { token: bad, vocab });
        }
        Ok((t, vocab))
    }

    pub fn value(&self, logits: &Tensor) -> Result<f64> {
        let (t, _) = self.check(logits)?;
        let mut total = 0.0;
        for (i, &s) in self.targets.iter().enumerate() {
            let row = logits.row(self.start_row + i);
            total += match self.kind {
                LossKind::SelfEntropy => log_sum_exp(row) - row[s],
                LossKind::LinearLogit => -row[s],
            };
        }
        Ok(self.scale * total / t as f64)
    }

    /// Loss value and its gradient with respect to the full logits tensor.
    pub fn value_and_grad(&self, logits: &Tensor) -> Result<(f64, Tensor)> {
        let value = self.value(logits)?;
        let (t, vocab) = self.check(logits)?;
        let c = self.scale / t as f64;
        let mut grad = vec![0.0; logits.numel()];
        for (i, &s) in self.targets.iter().enumerate() {
            let r = self.start_row + i;
            let out = &mut grad[r * vocab..(r + 1) * vocab];
            if self.kind == LossKind::SelfEntropy {
                let row = logits.row(r);
                let lse = log_sum_exp(row);
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = c * (v - lse).exp();
                }
            }
            out[s] -= c;
        }
        let grad = Tensor::from_op("loss_grad", logits.shape().to_vec(), grad, logits.precision())?;
        Ok((value, grad))
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().fold(0.0, |a, &v| a + (v - max).exp()).ln()
}

/// Truncated self-entropy `-(1/T_cut) Σ_{t < T_cut} log softmax(logits[t])[targets[t]]`.
///
/// Row `t` of `logits` must be the row that predicted `targets[t]`.
pub fn self_entropy_loss(logits: &Tensor, targets: &[usize], t_cut: usize) -> Result<f64> {
    let available = targets
        .len()
        .min(if logits.rank() == 2 { logits.shape()[0] } else { 0 });
    if t_cut == 0 || t_cut > available {
        return Err(Error::TruncationOutOfRange { t_cut, available });
    }
    LossSpec::self_entropy(0, targets[..t_cut].to_vec()).value(logits)
}
