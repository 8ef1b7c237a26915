//! Sample bookkeeping: correctness and length filtering, and the truncation
//! length shared by every kept sample.
//!
//! Lengths count generated tokens only; the prompt is excluded.

mod answer;
mod vocab;

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use answer::{check_answer, extract, parse_number, Extractor};
pub use vocab::Vocab;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Kept,
    WrongAnswer,
    TooShort,
    TooLong,
    LengthMismatch,
}

impl Verdict {
    pub const ALL: [Verdict; 5] = [
        Verdict::Kept,
        Verdict::WrongAnswer,
        Verdict::TooShort,
        Verdict::TooLong,
        Verdict::LengthMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verdict::Kept => "kept",
            Verdict::WrongAnswer => "wrong_answer",
            Verdict::TooShort => "too_short",
            Verdict::TooLong => "too_long",
            Verdict::LengthMismatch => "length_mismatch",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One question with both models' generations. `base_tokens`/`rl_tokens`
/// and the texts may be absent on input, in which case the driver generates
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub prompt_tokens: Vec<usize>,
    pub gold: String,
    #[serde(default)]
    pub base_tokens: Vec<usize>,
    #[serde(default)]
    pub rl_tokens: Vec<usize>,
    #[serde(default)]
    pub base_text: String,
    #[serde(default)]
    pub rl_text: String,
    #[serde(skip)]
    pub base_correct: bool,
    #[serde(skip)]
    pub rl_correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(rename = "T_cut", default, skip_serializing_if = "Option::is_none")]
    pub t_cut: Option<usize>,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, prompt: Vec<usize>, gold: impl Into<String>) -> Self {
        SampleRecord {
            id: id.into(),
            prompt_tokens: prompt,
            gold: gold.into(),
            base_tokens: Vec::new(),
            rl_tokens: Vec::new(),
            base_text: String::new(),
            rl_text: String::new(),
            base_correct: false,
            rl_correct: false,
            verdict: None,
            t_cut: None,
        }
    }

    pub fn t_base(&self) -> usize {
        self.base_tokens.len()
    }

    pub fn t_rl(&self) -> usize {
        self.rl_tokens.len()
    }

    pub fn correct(&self) -> bool {
        self.base_correct && self.rl_correct
    }

    pub fn grade(&mut self, extractor: Extractor) {
        self.base_correct = check_answer(&self.base_text, &self.gold, extractor);
        self.rl_correct = check_answer(&self.rl_text, &self.gold, extractor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            alpha: 0.5,
            beta: 0.5,
            gamma: 2.0,
            delta: 0.5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.alpha) && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(ok(self.beta) && ok(self.gamma) && 0.0 < self.beta && self.beta < self.gamma) {
            return Err(Error::Config(format!(
                "need 0 < beta < gamma, got beta={} gamma={}",
                self.beta, self.gamma
            )));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// `T̄ = (1/|Q|) Σ (T_base + T_RL)/2`.
pub fn mean_length<'a>(records: impl IntoIterator<Item = &'a SampleRecord>) -> Result<f64> {
    let (n, sum) = records.into_iter().fold((0usize, 0.0f64), |(n, s), r| {
        (n + 1, s + (r.t_base() + r.t_rl()) as f64 / 2.0)
    });
    if n == 0 {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(sum / n as f64)
}

/// `max(1, floor(α·T̄))`.
pub fn truncation_length(mean: f64, alpha: f64) -> usize {
    ((alpha * mean).floor() as usize).max(1)
}

/// Verdict for one record given the length bounds; reasons are checked in the
/// order wrong answer, too short, too long, length mismatch.
pub fn verdict(record: &SampleRecord, mean: f64, config: &FilterConfig) -> Verdict {
    if !record.correct() {
        return Verdict::WrongAnswer;
    }
    let (tb, tr) = (record.t_base() as f64, record.t_rl() as f64);
    let (t_min, t_max) = (config.beta * mean, config.gamma * mean);
    if tb < t_min || tr < t_min {
        return Verdict::TooShort;
    }
    if tb > t_max || tr > t_max {
        return Verdict::TooLong;
    }
    // two empty generations give 0/0, which is not below δ
    let ratio = (tb - tr).abs() / ((tb + tr) / 2.0);
    if ratio.is_nan() || ratio >= config.delta {
        return Verdict::LengthMismatch;
    }
    Verdict::Kept
}

/// Assign verdicts in place and return `T̄`, the mean length over records
/// answered correctly by both models. Depends only on the correctness flags
/// and lengths, so applying it twice changes nothing.
pub fn apply_filters(records: &mut [SampleRecord], config: &FilterConfig) -> Result<f64> {
    config.validate()?;
    let mean = mean_length(records.iter().filter(|r| r.correct()))?;
    for r in records.iter_mut() {
        r.verdict = Some(verdict(r, mean, config));
    }
    Ok(mean)
}

pub fn kept(records: &[SampleRecord]) -> impl Iterator<Item = &SampleRecord> {
    records.iter().filter(|r| r.verdict == Some(Verdict::Kept))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Inconsistent(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl(records: &[SampleRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    Ok(buf)
}
