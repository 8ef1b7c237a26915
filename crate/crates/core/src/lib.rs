//! Edge-attribution analysis of decoder-only transformers.
//!
//! The residual stream of an `L`-layer model is viewed as a DAG whose edges
//! connect sub-module outputs to the branch inputs that read them. Every edge
//! is scored per sample, either by exact ablation or by a single
//! forward/backward linearization, and the resulting score matrices are
//! summarized into activation intensity, information complexity and
//! kurtosis metrics for comparing a base model with its fine-tuned
//! counterpart.

pub mod attribution;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model_io;
pub mod pipeline;
pub mod run;
pub mod tensor;
pub mod transformer;

pub use error::{Error, ErrorClass, Result};
