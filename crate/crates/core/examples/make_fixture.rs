//! Writes the checked-in end-to-end fixture: a seeded base model, an "rl"
//! counterpart whose FFN gate is widened and whose projections are perturbed,
//! a toy vocab, and
//! a samples file whose generations come from greedy decoding of each model.
//!
//! Untrained models cannot do arithmetic, so each question's gold answer is
//! taken from the base model's own text (its last number). The rl model is
//! then correct exactly when it ends on the same number.
//!
//! Widening the gate enlarges the FFN hidden activations; on the default
//! seed this raises activation intensity at every truncation scale, which the
//! directional smoke test relies on. Other seeds and groups need not.
//!
//! cargo run --example make_fixture -- <out_dir> [seed] [widen] [noise] [n_questions] [groups]

use std::collections::BTreeMap;
use std::path::PathBuf;

use csc::model_io::{random_model, save_model};
use csc::pipeline::{extract, to_jsonl, Extractor, SampleRecord, Vocab};
use csc::tensor::Tensor;
use csc::transformer::{decode_greedy, ModelConfig, ModelWeights, Transformer};
use rand::Rng;
use rand_core::SeedableRng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

const WORDS: [&str; 20] = [
    "<eos>", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "plus", "minus", "times", "is", "what", "the", "answer",
    "so", "?",
];
const EOS: usize = 0;
/// Gain applied to every projection of the base model so the toy dynamics
/// are not dominated by the embedding.
const BASE_GAIN: f64 = 6.0;

fn is_projection(name: &str) -> bool {
    name.rsplit('.').next().is_some_and(|leaf| leaf.starts_with('w'))
}

fn map_projections(w: &ModelWeights, mut f: impl FnMut(&str, &Tensor) -> Tensor) -> ModelWeights {
    let named: BTreeMap<String, Tensor> = w
        .named_tensors()
        .into_iter()
        .map(|(n, t)| {
            let t = if is_projection(&n) { f(&n, t) } else { t.clone() };
            (n, t)
        })
        .collect();
    ModelWeights::from_named(w.config.clone(), named).expect("shapes unchanged")
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map(String::as_str).unwrap_or("crates/core/tests/fixtures"));
    let seed: u64 = args.get(1).map_or(1, |s| s.parse().expect("seed"));
    let widen: f64 = args.get(2).map_or(0.5, |s| s.parse().expect("widen"));
    let noise: f64 = args.get(3).map_or(0.05, |s| s.parse().expect("noise"));
    let n_questions: usize = args.get(4).map_or(40, |s| s.parse().expect("n_questions"));
    // comma-separated projection name prefixes to widen, e.g. "w_gate" or "wq,wk"
    let groups: Vec<String> = args
        .get(5)
        .map_or(vec!["w_gate".into()], |s| s.split(',').map(str::to_string).collect());

    let vocab = Vocab::new(WORDS.iter().map(|s| s.to_string()).collect()).unwrap();
    let mut config = ModelConfig::tiny(2, 16, 2, WORDS.len());
    config.max_positions = 64;
    let base = map_projections(&random_model(&config, seed).unwrap(), |_, t| {
        t.scale(BASE_GAIN).unwrap()
    });

    // rl = (1 + widen)·W + noise·max|W|·N(0, 1) on projections, widen only on `groups`
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed ^ 0x5eed);
    let rl = map_projections(&base, |name, t| {
        let leaf = name.rsplit('.').next().unwrap();
        let widen = if groups.iter().any(|g| leaf.starts_with(g.as_str())) {
            widen
        } else {
            0.0
        };
        let scale = t.max_abs();
        let data = t
            .data()
            .iter()
            .map(|v| (1.0 + widen) * v + noise * scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor::from_vec(t.shape().to_vec(), data).unwrap()
    });

    let (mb, mr) = (Transformer::new(&base), Transformer::new(&rl));
    let mut records = Vec::with_capacity(n_questions);
    for q in 0..n_questions {
        let a = rng.gen_range(0..10);
        let b = rng.gen_range(0..10);
        let op = ["plus", "minus", "times"][rng.gen_range(0..3)];
        let text = format!("what is {a} {op} {b} ?");
        let prompt = vocab.encode(&text).unwrap();
        let max_new = rng.gen_range(6..=18);
        let base_tokens = decode_greedy(&mb, &prompt, max_new, EOS).unwrap();
        let rl_tokens = decode_greedy(&mr, &prompt, max_new, EOS).unwrap();
        let base_text = vocab.decode(&base_tokens).unwrap();
        let rl_text = vocab.decode(&rl_tokens).unwrap();
        let gold = extract(&base_text, Extractor::LastNumber).unwrap_or_else(|| "none".into());
        let mut r = SampleRecord::new(format!("q{q:03}"), prompt, gold);
        r.base_tokens = base_tokens;
        r.rl_tokens = rl_tokens;
        r.base_text = base_text;
        r.rl_text = rl_text;
        records.push(r);
    }

    std::fs::create_dir_all(&out).unwrap();
    save_model(&base, out.join("base.csc")).unwrap();
    save_model(&rl, out.join("rl.csc")).unwrap();
    std::fs::write(out.join("vocab.txt"), WORDS.join("\n") + "\n").unwrap();
    std::fs::write(out.join("samples.jsonl"), to_jsonl(&records).unwrap()).unwrap();
    for r in &records {
        println!("{} | {:<40} | {:<40} | gold {}", r.id, r.base_text, r.rl_text, r.gold);
    }
}
