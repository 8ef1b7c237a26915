//! Decoder-only transformer with pre-normalized attention and gated FFN
//! branches, tied unembedding, and capture of every residual read and write.

mod config;
mod decode;
mod loss;
mod model;
mod weights;

pub use config::{ModelConfig, PositionalEncoding};
pub use decode::decode_greedy;
pub use loss::{self_entropy_loss, LossKind, LossSpec};
pub use model::{BranchMode, ExecutionTape, Intervention, PassCounts, Transformer};
pub use weights::{LayerWeights, ModelWeights, Norm};
