use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csc::attribution::Method;
use csc::graph::CircuitGraph;
use csc::metrics::{HistogramConfig, DEFAULT_BINS, DEFAULT_EPS, DEFAULT_EPS_REL};
use csc::model_io::{load_model, random_model, save_model, tensor_checksum};
use csc::pipeline::Extractor;
use csc::run::{GenerateConfig, RunConfig};
use csc::tensor::Precision;
use csc::transformer::ModelConfig;
use csc::{Error, ErrorClass};

#[derive(Parser)]
#[command(
    name = "csc",
    version,
    about = "Edge attribution analysis for base/RL transformer pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter samples, score every edge for both models and write the comparison report.
    Run(RunArgs),
    /// Check a model container and print its config, checksums and edge count.
    Validate { model: PathBuf },
    /// Print the residual DAG as `source<TAB>destination<TAB>edge_id` lines.
    Graph {
        #[arg(long)]
        layers: usize,
    },
    /// Write a seeded random model.
    InitModel(InitArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    rl: PathBuf,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Truncation scale; repeat the flag or list several values.
    #[arg(long, required = true, num_args = 1..)]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = Method::Eap)]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_EPS_REL)]
    eps_rel: f64,
    #[arg(long, value_enum, default_value_t = Extractor::LastNumber)]
    extractor: Extractor,
    #[arg(long, default_value = "fixture")]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overridden by CSC_PRECISION.
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Vocab file; enables generating missing generations and texts.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    max_new: usize,
    #[arg(long, default_value_t = 0)]
    eos: usize,
}

#[derive(Args)]
struct InitArgs {
    /// JSON model config; without it a small model is built from the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 11)]
    vocab: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    Precision::parse(s).ok_or_else(|| format!("expected f32 or f64, got {s:?}"))
}

impl RunArgs {
    fn into_config(self) -> RunConfig {
        RunConfig {
            base: self.base,
            rl: self.rl,
            samples: self.samples,
            out: self.out,
            dataset: self.dataset,
            alphas: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            method: self.method,
            histogram: HistogramConfig {
                bins: self.bins,
                eps: self.eps,
            },
            eps_rel: self.eps_rel,
            extractor: self.extractor,
            seed: self.seed,
            precision: self.precision,
            jobs: self.jobs,
            generate: self.vocab.map(|vocab| GenerateConfig {
                vocab,
                max_new: self.max_new,
                eos: self.eos,
            }),
        }
    }
}

fn validate(path: &PathBuf) -> csc::Result<()> {
    let w = load_model(path)?;
    println!("config:\n{}", serde_json::to_string_pretty(&w.config)?);
    println!("tensors:");
    for (name, t) in w.named_tensors() {
        println!(
            "  {name}\t{}\t{:?}\t{}",
            t.precision().name(),
            t.shape(),
            tensor_checksum(t)
        );
    }
    let graph = CircuitGraph::build(w.config.n_layers)?;
    println!("edges: {}", graph.edge_count());
    Ok(())
}

fn init_model(args: InitArgs) -> csc::Result<()> {
    let config = match &args.config {
        Some(p) => {
            let text = std::fs::read(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_slice(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ModelConfig::tiny(args.layers, args.d_model, args.heads, args.vocab),
    };
    save_model(&random_model(&config, args.seed)?, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> csc::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let report = csc::run::run(&args.into_config())?;
            for row in &report.comparison {
                let flag = match row.better {
                    Some(csc::metrics::Side::Rl) => "rl",
                    Some(csc::metrics::Side::Sft) => "sft",
                    None => "-",
                };
                println!(
                    "{}\t{}\t{}\t{:e}\t{:e}\t{flag}",
                    row.dataset,
                    row.alpha,
                    row.metric.label(),
                    row.sft,
                    row.rl
                );
            }
            Ok(())
        }
        Command::Validate { model } => validate(&model),
        Command::Graph { layers } => {
            print!("{}", CircuitGraph::build(layers)?.dump());
            Ok(())
        }
        Command::InitModel(args) => init_model(args),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::EmptyAfterFilter => 5,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
