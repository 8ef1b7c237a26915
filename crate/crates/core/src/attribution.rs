//! Per-sample edge scores: exact ablation (ACDC) and the one-pass gradient
//! linearization (EAP) under the truncated self-entropy loss.
//!
//! A sample is scored teacher-forced on its own generation. For a prompt of
//! length `p` and generation `s_1..s_T`, the model reads
//! `prompt ++ s_1..s_{T_cut}` and logit row `p - 1 + t` is scored against
//! `s_{t+1}`, i.e. each generated token is scored by the row that predicted it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CircuitGraph;
use crate::transformer::{Intervention, LossKind, LossSpec, Transformer};

pub use crate::transformer::self_entropy_loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Eap,
    Acdc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Eap => "eap",
            Method::Acdc => "acdc",
        }
    }
}

/// One prompt plus the tokens the model generated for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringInput {
    pub id: String,
    pub prompt: Vec<usize>,
    pub generation: Vec<usize>,
}

impl ScoringInput {
    pub fn new(id: impl Into<String>, prompt: Vec<usize>, generation: Vec<usize>) -> Self {
        ScoringInput {
            id: id.into(),
            prompt,
            generation,
        }
    }

    /// Tokens to feed and the loss over the first `t_cut` generated tokens.
    pub fn window(&self, t_cut: usize, kind: LossKind) -> Result<(Vec<usize>, LossSpec)> {
        if self.prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if t_cut == 0 || t_cut > self.generation.len() {
            return Err(Error::TruncationOutOfRange {
                t_cut,
                available: self.generation.len(),
            });
        }
        let targets = self.generation[..t_cut].to_vec();
        let mut tokens = self.prompt.clone();
        tokens.extend_from_slice(&targets);
        let loss = LossSpec::self_entropy(self.prompt.len() - 1, targets).with_kind(kind);
        Ok((tokens, loss))
    }
}

/// `n_o × n_i` edge scores for one sample, row-major (source, destination).
/// Entries outside the graph mask are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeScoreMatrix {
    pub sample_id: String,
    pub method: Method,
    pub n_sources: usize,
    pub n_destinations: usize,
    pub scores: Vec<f64>,
    pub t_cut: usize,
    /// Loss at the unablated point.
    pub loss: f64,
}

impl EdgeScoreMatrix {
    pub fn get(&self, source: usize, destination: usize) -> f64 {
        self.scores[source * self.n_destinations + destination]
    }

    /// Scores at valid-edge positions, in edge-id order.
    pub fn valid_values(&self, graph: &CircuitGraph) -> Vec<f64> {
        graph
            .edges()
            .iter()
            .map(|e| self.get(e.source, e.destination))
            .collect()
    }
}

fn check_graph(model: &Transformer<'_>, graph: &CircuitGraph) -> Result<()> {
    let l = model.weights().config.n_layers;
    if graph.n_layers() != l {
        return Err(Error::Config(format!(
            "graph has {} layers, model has {}",
            graph.n_layers(),
            l
        )));
    }
    Ok(())
}

/// EAP scores `-<g_dst, O_src>` for every valid edge, from a tape that has
/// been through `backward`. The inner product spans every captured position.
pub fn scores_from_tape(graph: &CircuitGraph, tape: &crate::transformer::ExecutionTape) -> Result<Vec<f64>> {
    let grads = tape.branch_grads()?;
    let n_i = graph.n_destinations();
    let mut scores = vec![0.0; graph.n_sources() * n_i];
    for e in graph.edges() {
        let o = tape.source_output(e.source);
        scores[e.source * n_i + e.destination] = -grads[e.destination].dot(o)?;
    }
    Ok(scores)
}

pub fn eap_attribute(
    model: &Transformer<'_>,
    graph: &CircuitGraph,
    input: &ScoringInput,
    t_cut: usize,
) -> Result<EdgeScoreMatrix> {
    eap_attribute_with(model, graph, input, t_cut, LossKind::SelfEntropy)
}

/// EAP with an explicit loss kind. Exactly one forward and one backward pass.
pub fn eap_attribute_with(
    model: &Transformer<'_>,
    graph: &CircuitGraph,
    input: &ScoringInput,
    t_cut: usize,
    kind: LossKind,
) -> Result<EdgeScoreMatrix> {
    check_graph(model, graph)?;
    let (tokens, loss) = input.window(t_cut, kind)?;
    let mut tape = model.forward(&tokens)?;
    let value = model.backward(&mut tape, &loss)?;
    Ok(EdgeScoreMatrix {
        sample_id: input.id.clone(),
        method: Method::Eap,
        n_sources: graph.n_sources(),
        n_destinations: graph.n_destinations(),
        scores: scores_from_tape(graph, &tape)?,
        t_cut,
        loss: value,
    })
}

/// Exact ablation scorer for one sample: one clean forward up front, then one
/// forward per scored edge.
pub struct AcdcScorer<'m, 'w> {
    model: &'m Transformer<'w>,
    graph: &'m CircuitGraph,
    tokens: Vec<usize>,
    loss: LossSpec,
    clean: f64,
}

impl<'m, 'w> AcdcScorer<'m, 'w> {
    pub fn new(
        model: &'m Transformer<'w>,
        graph: &'m CircuitGraph,
        input: &ScoringInput,
        t_cut: usize,
        kind: LossKind,
    ) -> Result<Self> {
        check_graph(model, graph)?;
        let (tokens, loss) = input.window(t_cut, kind)?;
        let clean = loss.value(model.forward(&tokens)?.logits())?;
        Ok(AcdcScorer {
            model,
            graph,
            tokens,
            loss,
            clean,
        })
    }

    pub fn clean_loss(&self) -> f64 {
        self.clean
    }

    /// `L(dst reads H - fraction * O_src) - L(clean)` for edge `edge_id`.
    pub fn score(&self, edge_id: usize, fraction: f64) -> Result<f64> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("ablation fraction {fraction} outside (0, 1]")));
        }
        let edge = self.graph.edges().get(edge_id).ok_or_else(|| Error::InvalidEdge {
            source_name: format!("edge #{edge_id}"),
            destination: "?".into(),
        })?;
        let ablation = Intervention::Ablate {
            source: edge.source,
            destination: edge.destination,
            fraction,
        };
        let tape = self.model.forward_with(&self.tokens, &ablation)?;
        Ok(self.loss.value(tape.logits())? - self.clean)
    }

    /// Full ablation of every edge.
    pub fn matrix(&self, sample_id: &str, t_cut: usize) -> Result<EdgeScoreMatrix> {
        let n_i = self.graph.n_destinations();
        let mut scores = vec![0.0; self.graph.n_sources() * n_i];
        for e in self.graph.edges() {
            scores[e.source * n_i + e.destination] = self.score(e.id, 1.0)?;
        }
        Ok(EdgeScoreMatrix {
            sample_id: sample_id.to_string(),
            method: Method::Acdc,
            n_sources: self.graph.n_sources(),
            n_destinations: n_i,
            scores,
            t_cut,
            loss: self.clean,
        })
    }
}

/// Loss change from removing `fraction` of the edge's contribution.
pub fn acdc_attribute(
    model: &Transformer<'_>,
    graph: &CircuitGraph,
    input: &ScoringInput,
    t_cut: usize,
    edge_id: usize,
    fraction: f64,
) -> Result<f64> {
    AcdcScorer::new(model, graph, input, t_cut, LossKind::SelfEntropy)?.score(edge_id, fraction)
}

pub fn acdc_matrix(
    model: &Transformer<'_>,
    graph: &CircuitGraph,
    input: &ScoringInput,
    t_cut: usize,
) -> Result<EdgeScoreMatrix> {
    AcdcScorer::new(model, graph, input, t_cut, LossKind::SelfEntropy)?.matrix(&input.id, t_cut)
}

fn attribute_one(
    model: &Transformer<'_>,
    graph: &CircuitGraph,
    input: &ScoringInput,
    t_cut: usize,
    method: Method,
) -> Result<EdgeScoreMatrix> {
    match method {
        Method::Eap => eap_attribute(model, graph, input, t_cut),
        Method::Acdc => acdc_matrix(model, graph, input, t_cut),
    }
    .map_err(|e| Error::Sample {
        id: input.id.clone(),
        source: Box::new(e),
    })
}

/// Score every sample, preserving input order. `jobs > 1` runs samples on a
/// dedicated thread pool; the output does not depend on `jobs`.
pub fn attribute_dataset(
    model: &Transformer<'_>,
    graph: &CircuitGraph,
    samples: &[ScoringInput],
    t_cut: usize,
    method: Method,
    jobs: usize,
) -> Result<Vec<EdgeScoreMatrix>> {
    if jobs <= 1 {
        return samples
            .iter()
            .map(|s| attribute_one(model, graph, s, t_cut, method))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        samples
            .par_iter()
            .map(|s| attribute_one(model, graph, s, t_cut, method))
            .collect()
    })
}
