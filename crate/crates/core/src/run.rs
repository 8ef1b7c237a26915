//! End-to-end driver: generate (optionally), filter, attribute both models,
//! compute metrics, compare, and write the artifacts.
//!
//! Everything is computed in memory before the first file is written, so a
//! failing run leaves no partial outputs behind. `report.json` holds no
//! paths, timestamps or worker counts and is byte-identical across reruns;
//! `manifest.json` records those details instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{attribute_dataset, EdgeScoreMatrix, Method, ScoringInput};
use crate::error::{Error, Result};
use crate::graph::CircuitGraph;
use crate::metrics::{
    build_comparison, max_abs, mean_abs_matrix, metrics_report, relative_change, ComparisonRow, HistogramConfig,
    MetricsReport, ReportInput, Side,
};
use crate::model_io::{hex_digest, load_model, scores_container, sidecar_path, ScoreMeta};
use crate::pipeline::{self, Extractor, FilterConfig, SampleRecord, Verdict, Vocab};
use crate::tensor::Precision;
use crate::transformer::{decode_greedy, ModelWeights, Transformer};

pub const PRECISION_ENV: &str = "CSC_PRECISION";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub vocab: PathBuf,
    pub max_new: usize,
    pub eos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub base: PathBuf,
    pub rl: PathBuf,
    pub samples: PathBuf,
    pub out: PathBuf,
    pub dataset: String,
    pub alphas: Vec<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub method: Method,
    pub histogram: HistogramConfig,
    pub eps_rel: f64,
    pub extractor: Extractor,
    pub seed: u64,
    pub precision: Option<Precision>,
    pub jobs: usize,
    pub generate: Option<GenerateConfig>,
}

impl RunConfig {
    pub fn filter(&self, alpha: f64) -> FilterConfig {
        FilterConfig {
            alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![&self.base, &self.rl, &self.samples];
        if let Some(g) = &self.generate {
            inputs.push(&g.vocab);
        }
        for p in inputs {
            if !p.is_file() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("at least one --alpha is required".into()));
        }
        for (i, a) in self.alphas.iter().enumerate() {
            self.filter(*a).validate()?;
            if self.alphas[..i].contains(a) {
                return Err(Error::Config(format!("alpha {a} given twice")));
            }
        }
        self.histogram.validate()?;
        if !(self.eps_rel.is_finite() && self.eps_rel >= 0.0) {
            return Err(Error::Config(format!(
                "eps_rel must be finite and >= 0, got {}",
                self.eps_rel
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.dataset.is_empty() || self.dataset.contains([',', '\n']) {
            return Err(Error::Config(format!("bad dataset tag {:?}", self.dataset)));
        }
        Ok(())
    }
}

/// `CSC_PRECISION` wins over the configured precision.
pub fn effective_precision(configured: Option<Precision>) -> Result<Option<Precision>> {
    match std::env::var(PRECISION_ENV) {
        Ok(v) => Precision::parse(&v)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{PRECISION_ENV}={v:?} is not f32 or f64"))),
        Err(_) => Ok(configured),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex_digest(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn load_pair(config: &RunConfig, precision: Option<Precision>) -> Result<(ModelWeights, ModelWeights)> {
    let mut base = load_model(&config.base)?;
    let mut rl = load_model(&config.rl)?;
    if let Some(p) = precision {
        base = base.with_precision(p)?;
        rl = rl.with_precision(p)?;
    }
    let (b, r) = (&base.config, &rl.config);
    if b.n_layers != r.n_layers || b.vocab_size != r.vocab_size || b.d_model != r.d_model {
        return Err(Error::Config(format!(
            "model pair differs in shape: base L={} d={} V={}, rl L={} d={} V={}",
            b.n_layers, b.d_model, b.vocab_size, r.n_layers, r.d_model, r.vocab_size
        )));
    }
    Ok((base, rl))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Fill in missing generations and texts. Generation needs the vocab for
/// texts; records that already carry tokens keep them.
fn complete_generations(
    records: &mut [SampleRecord],
    base: &ModelWeights,
    rl: &ModelWeights,
    generate: Option<&GenerateConfig>,
    jobs: usize,
) -> Result<()> {
    let vocab = generate.map(|g| Vocab::load(&g.vocab)).transpose()?;
    if let Some(v) = &vocab {
        if v.len() != base.config.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} entries, models have {}",
                v.len(),
                base.config.vocab_size
            )));
        }
    }
    let (mb, mr) = (Transformer::new(base), Transformer::new(rl));
    with_pool(jobs, || {
        records.par_iter_mut().try_for_each(|r| -> Result<()> {
            let wrap = |e: Error| Error::Sample {
                id: r.id.clone(),
                source: Box::new(e),
            };
            for (tokens, text, model) in [
                (&mut r.base_tokens, &mut r.base_text, &mb),
                (&mut r.rl_tokens, &mut r.rl_text, &mr),
            ] {
                if tokens.is_empty() {
                    let g = generate.ok_or_else(|| {
                        wrap(Error::Config(
                            "record has no generation and no --vocab to generate with".into(),
                        ))
                    })?;
                    *tokens = decode_greedy(model, &r.prompt_tokens, g.max_new, g.eos).map_err(wrap)?;
                }
                if text.is_empty() {
                    if let Some(v) = &vocab {
                        *text = v.decode(tokens).map_err(wrap)?;
                    }
                }
            }
            Ok(())
        })
    })?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSection {
    pub alpha: f64,
    pub t_cut: usize,
    pub base: MetricsReport,
    pub rl: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub method: Method,
    pub extractor: Extractor,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eps_rel: f64,
    pub precision: Precision,
    pub base_sha256: String,
    pub rl_sha256: String,
    pub n_records: usize,
    pub verdicts: BTreeMap<String, usize>,
    pub mean_length: f64,
    pub sections: Vec<AlphaSection>,
    pub comparison: Vec<ComparisonRow>,
}

/// All artifacts of a run, keyed by path relative to the output directory.
pub struct RunOutput {
    pub report: RunReport,
    pub files: BTreeMap<PathBuf, Vec<u8>>,
}

fn alpha_dir(alpha: f64) -> PathBuf {
    PathBuf::from(format!("alpha_{alpha}"))
}

fn scoring_inputs(kept: &[&SampleRecord], rl: bool) -> Vec<ScoringInput> {
    kept.iter()
        .map(|r| {
            let gen = if rl { &r.rl_tokens } else { &r.base_tokens };
            ScoringInput::new(r.id.clone(), r.prompt_tokens.clone(), gen.clone())
        })
        .collect()
}

fn check_t_cut(kept: &[&SampleRecord], t_cut: usize) -> Result<()> {
    for r in kept {
        let available = r.t_base().min(r.t_rl());
        if t_cut > available {
            return Err(Error::Sample {
                id: r.id.clone(),
                source: Box::new(Error::TruncationOutOfRange { t_cut, available }),
            });
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn relative_change_csv(
    graph: &CircuitGraph,
    base: &[EdgeScoreMatrix],
    rl: &[EdgeScoreMatrix],
    eps_rel: f64,
) -> Result<String> {
    let mb = mean_abs_matrix(base, graph)?;
    let mr = mean_abs_matrix(rl, graph)?;
    let rc = relative_change(base, rl, graph, eps_rel)?;
    let mut s = String::from("edge_id,source,destination,base_mean_abs,rl_mean_abs,relative_change\n");
    for e in graph.edges() {
        let k = e.source * graph.n_destinations() + e.destination;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.id,
            graph.source(e.source),
            graph.destination(e.destination),
            mb[k],
            mr[k],
            rc[k]
        );
    }
    Ok(s)
}

fn node_entropy_csv(graph: &CircuitGraph, base: &MetricsReport, rl: &MetricsReport) -> String {
    let mut s = String::from("source,base,rl\n");
    for i in 0..graph.n_sources() {
        let _ = writeln!(
            s,
            "{},{},{}",
            graph.source(i),
            fmt_opt(base.node_entropy[i]),
            fmt_opt(rl.node_entropy[i])
        );
    }
    s
}

fn diversity_csv(base: &MetricsReport, rl: &MetricsReport) -> String {
    let mut s = String::from("model,diversity,pairs,skipped_samples\n");
    for r in [base, rl] {
        match r.diversity {
            Some(d) => {
                let _ = writeln!(s, "{},{},{},{}", r.model, d.value, d.pairs, d.skipped_samples);
            }
            None => {
                let _ = writeln!(s, "{},,0,", r.model);
            }
        }
    }
    s
}

pub fn table_csv(rows: &[ComparisonRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "metric", "alpha", "sft", "rl", "better"])?;
    for r in rows {
        let better = match r.better {
            Some(Side::Sft) => "sft",
            Some(Side::Rl) => "rl",
            None => "",
        };
        w.write_record([
            r.dataset.clone(),
            r.metric.label().to_string(),
            r.alpha.to_string(),
            r.sft.to_string(),
            r.rl.to_string(),
            better.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Run the whole analysis in memory.
pub fn execute(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let precision = effective_precision(config.precision)?;
    let (base, rl) = load_pair(config, precision)?;
    let mut records = pipeline::read_jsonl(&config.samples)?;
    complete_generations(&mut records, &base, &rl, config.generate.as_ref(), config.jobs)?;
    for r in records.iter_mut() {
        r.grade(config.extractor);
    }
    let mean = pipeline::apply_filters(&mut records, &config.filter(config.alphas[0]))?;
    let kept: Vec<&SampleRecord> = pipeline::kept(&records).collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }

    let graph = CircuitGraph::build(base.config.n_layers)?;
    let (mb, mr) = (Transformer::new(&base), Transformer::new(&rl));
    let base_inputs = scoring_inputs(&kept, false);
    let rl_inputs = scoring_inputs(&kept, true);
    let mut files = BTreeMap::new();
    let mut sections = Vec::new();
    for &alpha in &config.alphas {
        let t_cut = pipeline::truncation_length(mean, alpha);
        check_t_cut(&kept, t_cut)?;
        let sb = attribute_dataset(&mb, &graph, &base_inputs, t_cut, config.method, config.jobs)?;
        let sr = attribute_dataset(&mr, &graph, &rl_inputs, t_cut, config.method, config.jobs)?;
        let range_max = max_abs(&sb, &graph)?.max(max_abs(&sr, &graph)?);
        let input = |model| ReportInput {
            model,
            dataset: &config.dataset,
            alpha,
            t_cut,
            histogram: config.histogram,
            range_max,
        };
        let rb = metrics_report(input("base"), &sb, &graph)?;
        let rr = metrics_report(input("rl"), &sr, &graph)?;

        let dir = alpha_dir(alpha);
        let mut with_cut = records.clone();
        for r in with_cut.iter_mut() {
            r.t_cut = Some(t_cut);
        }
        files.insert(dir.join("samples.jsonl"), pipeline::to_jsonl(&with_cut)?);
        for (name, scores) in [("scores_base.csc", &sb), ("scores_rl.csc", &sr)] {
            let meta = ScoreMeta {
                sample_ids: scores.iter().map(|m| m.sample_id.clone()).collect(),
                method: config.method,
                alpha,
                t_cut,
                n_layers: graph.n_layers(),
                losses: scores.iter().map(|m| m.loss).collect(),
            };
            let path = dir.join(name);
            files.insert(sidecar_path(&path), pretty(&meta)?);
            files.insert(path, scores_container(scores, &meta)?.to_bytes()?);
        }
        let fig = dir.join("figdata");
        files.insert(
            fig.join("relative_change.csv"),
            relative_change_csv(&graph, &sb, &sr, config.eps_rel)?.into_bytes(),
        );
        files.insert(
            fig.join("node_entropy.csv"),
            node_entropy_csv(&graph, &rb, &rr).into_bytes(),
        );
        files.insert(fig.join("diversity.csv"), diversity_csv(&rb, &rr).into_bytes());
        sections.push(AlphaSection {
            alpha,
            t_cut,
            base: rb,
            rl: rr,
        });
    }

    let base_reports: Vec<_> = sections.iter().map(|s| s.base.clone()).collect();
    let rl_reports: Vec<_> = sections.iter().map(|s| s.rl.clone()).collect();
    let comparison = build_comparison(&base_reports, &rl_reports)?;
    let verdicts = Verdict::ALL
        .iter()
        .map(|v| {
            (
                v.name().to_string(),
                records.iter().filter(|r| r.verdict == Some(*v)).count(),
            )
        })
        .collect();
    let report = RunReport {
        dataset: config.dataset.clone(),
        method: config.method,
        extractor: config.extractor,
        beta: config.beta,
        gamma: config.gamma,
        delta: config.delta,
        eps_rel: config.eps_rel,
        precision: base.config.precision,
        base_sha256: file_digest(&config.base)?,
        rl_sha256: file_digest(&config.rl)?,
        n_records: records.len(),
        verdicts,
        mean_length: mean,
        sections,
        comparison,
    };
    files.insert(PathBuf::from("report.json"), pretty(&report)?);
    files.insert(PathBuf::from("table.csv"), table_csv(&report.comparison)?);
    Ok(RunOutput { report, files })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a RunConfig,
    effective_precision: Precision,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<String, String>,
}

/// Write every artifact plus `manifest.json` under `config.out`.
pub fn write_outputs(config: &RunConfig, output: &RunOutput) -> Result<()> {
    let mut inputs = BTreeMap::new();
    inputs.insert("base", output.report.base_sha256.clone());
    inputs.insert("rl", output.report.rl_sha256.clone());
    inputs.insert("samples", file_digest(&config.samples)?);
    if let Some(g) = &config.generate {
        inputs.insert("vocab", file_digest(&g.vocab)?);
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config,
        effective_precision: output.report.precision,
        inputs,
        outputs: output
            .files
            .iter()
            .map(|(p, bytes)| (p.display().to_string(), hex_digest(bytes)))
            .collect(),
    };
    let manifest = pretty(&manifest)?;
    for (rel, bytes) in output
        .files
        .iter()
        .chain([(&PathBuf::from("manifest.json"), &manifest)])
    {
        let path = config.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn run(config: &RunConfig) -> Result<RunReport> {
    let output = execute(config)?;
    write_outputs(config, &output)?;
    Ok(output.report)
}
