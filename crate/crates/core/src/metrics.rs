//! Summary statistics over per-sample edge-score matrices.
//!
//! Every statistic reads only valid-edge positions; masked zeros are never
//! counted. Sums run sequentially in sample order, so results do not depend
//! on how many worker threads produced the inputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::EdgeScoreMatrix;
use crate::error::{Error, Result};
use crate::graph::CircuitGraph;

pub const DEFAULT_BINS: usize = 256;
pub const DEFAULT_EPS: f64 = 1e-12;
pub const DEFAULT_EPS_REL: f64 = 1e-12;

fn metric_err(metric: &'static str, detail: impl Into<String>) -> Error {
    Error::Metric {
        metric,
        detail: detail.into(),
    }
}

/// Valid-edge values of each matrix, after checking shapes against `graph`.
fn valid_rows(metric: &'static str, matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<Vec<Vec<f64>>> {
    if matrices.is_empty() {
        return Err(metric_err(metric, "no samples"));
    }
    matrices
        .iter()
        .map(|m| {
            if m.n_sources != graph.n_sources() || m.n_destinations != graph.n_destinations() {
                return Err(Error::shape(
                    metric,
                    format!(
                        "sample {} is {}x{}, graph is {}x{}",
                        m.sample_id,
                        m.n_sources,
                        m.n_destinations,
                        graph.n_sources(),
                        graph.n_destinations()
                    ),
                ));
            }
            Ok(m.valid_values(graph))
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean absolute score over samples and valid edges.
pub fn act_intensity(matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<f64> {
    let rows = valid_rows("act_intensity", matrices, graph)?;
    let n: usize = rows.iter().map(Vec::len).sum();
    let total: f64 = rows.iter().flatten().map(|v| v.abs()).sum();
    Ok(total / n as f64)
}

/// Largest absolute valid-edge score, used to share a histogram range
/// between the two models of a pair.
pub fn max_abs(matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<f64> {
    let rows = valid_rows("max_abs", matrices, graph)?;
    Ok(rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    pub eps: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig {
            bins: DEFAULT_BINS,
            eps: DEFAULT_EPS,
        }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entropy {
    pub value: f64,
    /// The range `[0, max]` had zero width; the value is 0 by convention.
    pub degenerate: bool,
}

/// Equal-width histogram of `values` over `[0, max]`; values at or beyond
/// `max` land in the last bin.
pub fn histogram(values: &[f64], bins: usize, max: f64) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v / max) * bins as f64).floor();
        let b = if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(bins - 1)
        };
        counts[b] += 1;
    }
    counts
}

/// `−Σ p_b ln(p_b + ε)` of a histogram.
pub fn histogram_entropy(counts: &[usize], eps: f64) -> f64 {
    let total: usize = counts.iter().sum();
    let n = total as f64;
    // with p = c/N: −Σ p ln p = ln N − Σ c ln c / N, and ln(p + ε) − ln p = ln_1p(ε/p)
    // is summed on its own so the tiny ε part keeps its bits
    let (mut c_ln_c, mut shift) = (0.0, 0.0);
    for &c in counts.iter().filter(|&&c| c > 0) {
        let c = c as f64;
        c_ln_c += c * c.ln();
        shift += c / n * (eps * n / c).ln_1p();
    }
    n.ln() - c_ln_c / n - shift
}

/// Shannon entropy of the pooled |W| histogram. `range_max` fixes the upper
/// edge of the range (pass the pair-wide maximum to make two models
/// comparable); `None` uses this set's own maximum.
pub fn info_complexity(
    matrices: &[EdgeScoreMatrix],
    graph: &CircuitGraph,
    config: &HistogramConfig,
    range_max: Option<f64>,
) -> Result<Entropy> {
    config.validate()?;
    let rows = valid_rows("info_complexity", matrices, graph)?;
    let values: Vec<f64> = rows.into_iter().flatten().map(f64::abs).collect();
    let max = range_max.unwrap_or_else(|| values.iter().fold(0.0f64, |m, v| m.max(*v)));
    if max <= 0.0 {
        return Ok(Entropy {
            value: 0.0,
            degenerate: true,
        });
    }
    let counts = histogram(&values, config.bins, max);
    Ok(Entropy {
        value: histogram_entropy(&counts, config.eps),
        degenerate: false,
    })
}

/// Population excess kurtosis, or `None` for zero variance.
pub fn excess_kurtosis(values: &[f64]) -> Option<f64> {
    let mu = mean(values);
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 || !m2.is_finite() {
        return None;
    }
    let m4 = values.iter().map(|v| (v - mu).powi(4)).sum::<f64>() / n;
    Some(m4 / (m2 * m2) - 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kurtosis {
    pub value: f64,
    /// Samples dropped because their scores had zero variance.
    pub skipped: usize,
}

/// Per-sample excess kurtosis averaged over samples with nonzero variance.
pub fn dist_kurtosis(matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<Kurtosis> {
    let rows = valid_rows("dist_kurtosis", matrices, graph)?;
    let per: Vec<Option<f64>> = rows.par_iter().map(|r| excess_kurtosis(r)).collect();
    let kept: Vec<f64> = per.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(metric_err("dist_kurtosis", "every sample has zero variance"));
    }
    Ok(Kurtosis {
        value: mean(&kept),
        skipped: per.len() - kept.len(),
    })
}

/// Pearson correlation, `None` if either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    pub value: f64,
    pub pairs: usize,
    /// Samples left out because their scores had zero variance.
    pub skipped_samples: usize,
}

/// One minus the mean pairwise Pearson correlation of samples.
pub fn diversity_score(matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<Diversity> {
    let rows = valid_rows("diversity_score", matrices, graph)?;
    let usable: Vec<&Vec<f64>> = rows.iter().filter(|r| excess_kurtosis(r).is_some()).collect();
    if usable.len() < 2 {
        return Err(metric_err(
            "diversity_score",
            format!("needs two samples with nonzero variance, have {}", usable.len()),
        ));
    }
    let pairs: Vec<(usize, usize)> = (0..usable.len())
        .flat_map(|i| (i + 1..usable.len()).map(move |j| (i, j)))
        .collect();
    let corr: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| pearson(usable[i], usable[j]).expect("nonzero variance checked"))
        .collect();
    Ok(Diversity {
        value: 1.0 - mean(&corr),
        pairs: corr.len(),
        skipped_samples: rows.len() - usable.len(),
    })
}

/// Entropy of each source node's normalized |outgoing scores|, per sample,
/// averaged over samples. A node whose outgoing scores are all zero in every
/// sample gets `None`.
pub fn node_output_entropy(matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<Vec<Option<f64>>> {
    valid_rows("node_output_entropy", matrices, graph)?;
    Ok((0..graph.n_sources())
        .map(|s| {
            let dests: Vec<usize> = graph.destinations_of(s).collect();
            let per: Vec<f64> = matrices
                .iter()
                .filter_map(|m| {
                    let w: Vec<f64> = dests.iter().map(|&d| m.get(s, d).abs()).collect();
                    let total: f64 = w.iter().sum();
                    (total > 0.0).then(|| {
                        -w.iter()
                            .filter(|&&v| v > 0.0)
                            .map(|v| {
                                let p = v / total;
                                p * p.ln()
                            })
                            .sum::<f64>()
                    })
                })
                .collect();
            (!per.is_empty()).then(|| mean(&per))
        })
        .collect())
}

/// Mean |W| per edge over samples, row-major `n_o × n_i`, masked entries 0.
pub fn mean_abs_matrix(matrices: &[EdgeScoreMatrix], graph: &CircuitGraph) -> Result<Vec<f64>> {
    valid_rows("mean_abs_matrix", matrices, graph)?;
    let n_i = graph.n_destinations();
    let mut out = vec![0.0; graph.n_sources() * n_i];
    for e in graph.edges() {
        let total: f64 = matrices.iter().map(|m| m.get(e.source, e.destination).abs()).sum();
        out[e.source * n_i + e.destination] = total / matrices.len() as f64;
    }
    Ok(out)
}

/// `(mean|W_rl| − mean|W_base|) / (mean|W_base| + ε_rel)` per edge, row-major
/// `n_o × n_i`, masked entries 0.
pub fn relative_change(
    base: &[EdgeScoreMatrix],
    rl: &[EdgeScoreMatrix],
    graph: &CircuitGraph,
    eps_rel: f64,
) -> Result<Vec<f64>> {
    let b = mean_abs_matrix(base, graph)?;
    let r = mean_abs_matrix(rl, graph)?;
    let mut out = vec![0.0; b.len()];
    for e in graph.edges() {
        let k = e.source * graph.n_destinations() + e.destination;
        out[k] = (r[k] - b[k]) / (b[k] + eps_rel);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub dataset: String,
    pub alpha: f64,
    pub t_cut: usize,
    pub n_samples: usize,
    pub act_intens: f64,
    pub info_complex: f64,
    pub info_degenerate: bool,
    pub dist_kurt: f64,
    pub kurtosis_skipped: usize,
    pub histogram: HistogramConfig,
    pub range_max: f64,
    pub node_entropy: Vec<Option<f64>>,
    /// Absent with fewer than two samples of nonzero variance.
    pub diversity: Option<Diversity>,
}

pub struct ReportInput<'a> {
    pub model: &'a str,
    pub dataset: &'a str,
    pub alpha: f64,
    pub t_cut: usize,
    pub histogram: HistogramConfig,
    pub range_max: f64,
}

pub fn metrics_report(
    input: ReportInput<'_>,
    matrices: &[EdgeScoreMatrix],
    graph: &CircuitGraph,
) -> Result<MetricsReport> {
    let info = info_complexity(matrices, graph, &input.histogram, Some(input.range_max))?;
    let kurt = dist_kurtosis(matrices, graph)?;
    Ok(MetricsReport {
        model: input.model.to_string(),
        dataset: input.dataset.to_string(),
        alpha: input.alpha,
        t_cut: input.t_cut,
        n_samples: matrices.len(),
        act_intens: act_intensity(matrices, graph)?,
        info_complex: info.value,
        info_degenerate: info.degenerate,
        dist_kurt: kurt.value,
        kurtosis_skipped: kurt.skipped,
        histogram: input.histogram,
        range_max: input.range_max,
        node_entropy: node_output_entropy(matrices, graph)?,
        diversity: diversity_score(matrices, graph).ok(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ActIntens,
    InfoComplex,
    DistKurt,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::ActIntens, Metric::InfoComplex, Metric::DistKurt];

    pub fn label(self) -> &'static str {
        match self {
            Metric::ActIntens => "Act.Intens.",
            Metric::InfoComplex => "Info.Complex.",
            Metric::DistKurt => "Dist.Kurt.",
        }
    }

    /// Whether a larger value is the better one.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::DistKurt)
    }

    pub fn value(self, report: &MetricsReport) -> f64 {
        match self {
            Metric::ActIntens => report.act_intens,
            Metric::InfoComplex => report.info_complex,
            Metric::DistKurt => report.dist_kurt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Sft,
    Rl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub metric: Metric,
    pub alpha: f64,
    pub sft: f64,
    pub rl: f64,
    /// `None` on a tie.
    pub better: Option<Side>,
}

pub fn better(metric: Metric, sft: f64, rl: f64) -> Option<Side> {
    if sft == rl {
        return None;
    }
    Some(if (rl > sft) == metric.higher_is_better() {
        Side::Rl
    } else {
        Side::Sft
    })
}

/// One row per metric for every `(dataset, α)` key, in the order of `base`.
pub fn build_comparison(base: &[MetricsReport], rl: &[MetricsReport]) -> Result<Vec<ComparisonRow>> {
    if base.len() != rl.len() {
        return Err(Error::Config(format!(
            "{} base reports vs {} rl reports",
            base.len(),
            rl.len()
        )));
    }
    let mut rows = Vec::with_capacity(3 * base.len());
    for b in base {
        let r = rl
            .iter()
            .find(|r| r.dataset == b.dataset && r.alpha == b.alpha)
            .ok_or_else(|| Error::Config(format!("no rl report for dataset {} alpha {}", b.dataset, b.alpha)))?;
        for metric in Metric::ALL {
            let (sft, rl) = (metric.value(b), metric.value(r));
            rows.push(ComparisonRow {
                dataset: b.dataset.clone(),
                metric,
                alpha: b.alpha,
                sft,
                rl,
                better: better(metric, sft, rl),
            });
        }
    }
    Ok(rows)
}
