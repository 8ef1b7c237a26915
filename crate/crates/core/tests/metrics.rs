mod common;

use common::rng;
use csc::attribution::{EdgeScoreMatrix, Method};
use csc::graph::CircuitGraph;
use csc::metrics::*;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Matrix whose valid edges (in edge-id order) carry `values`.
fn matrix(graph: &CircuitGraph, id: usize, values: &[f64]) -> EdgeScoreMatrix {
    assert_eq!(values.len(), graph.edge_count());
    let (n_o, n_i) = (graph.n_sources(), graph.n_destinations());
    let mut scores = vec![0.0; n_o * n_i];
    for (e, v) in graph.edges().iter().zip(values) {
        scores[e.source * n_i + e.destination] = *v;
    }
    EdgeScoreMatrix {
        sample_id: format!("s{id}"),
        method: Method::Eap,
        n_sources: n_o,
        n_destinations: n_i,
        scores,
        t_cut: 1,
        loss: 0.0,
    }
}

fn random_matrices(graph: &CircuitGraph, n: usize, seed: u64) -> Vec<EdgeScoreMatrix> {
    let mut g = rng(seed);
    (0..n)
        .map(|k| {
            let v: Vec<f64> = (0..graph.edge_count())
                .map(|_| g.sample::<f64, _>(StandardNormal))
                .collect();
            matrix(graph, k, &v)
        })
        .collect()
}

fn scaled(ms: &[EdgeScoreMatrix], a: f64, b: f64, graph: &CircuitGraph) -> Vec<EdgeScoreMatrix> {
    ms.iter()
        .enumerate()
        .map(|(k, m)| {
            let v: Vec<f64> = m.valid_values(graph).iter().map(|x| a * x + b).collect();
            matrix(graph, k, &v)
        })
        .collect()
}

#[test]
fn act_intensity_examples() {
    let g = CircuitGraph::build(2).unwrap();
    let ones = matrix(&g, 0, &[1.0; 15]);
    assert_eq!(act_intensity(std::slice::from_ref(&ones), &g).unwrap(), 1.0);
    let signs: Vec<f64> = (0..15).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect();
    assert_eq!(act_intensity(&[matrix(&g, 0, &signs)], &g).unwrap(), 2.0);

    // masked positions never count, whatever they hold
    let mut dirty = ones;
    let n_i = g.n_destinations();
    dirty.scores[n_i * 4] = 1e6; // (F2, A1.in) is not an edge
    assert!(!g.is_valid(4, 0));
    assert_eq!(act_intensity(&[dirty], &g).unwrap(), 1.0);
}

#[test]
fn metric_inputs_are_checked() {
    let g = CircuitGraph::build(2).unwrap();
    assert!(act_intensity(&[], &g).is_err());
    let other = CircuitGraph::build(1).unwrap();
    let m = matrix(&other, 0, &[1.0; 6]);
    assert!(matches!(act_intensity(&[m], &g), Err(csc::Error::Shape { .. })));
}

#[test]
fn info_complexity_identities() {
    let g = CircuitGraph::build(1).unwrap();
    let cfg = HistogramConfig::default();

    // one bin: every value equal to the maximum
    let one = matrix(&g, 0, &[0.3; 6]);
    let e = info_complexity(&[one], &g, &cfg, None).unwrap();
    assert!(e.value.abs() < 1e-9 && !e.degenerate);

    // uniform: one value at the centre of each of the B bins
    let b = cfg.bins;
    let values: Vec<f64> = (0..b).map(|i| (i as f64 + 0.5) / b as f64).collect();
    let counts = histogram(&values, b, 1.0);
    assert!(counts.iter().all(|&c| c == 1));
    let h = histogram_entropy(&counts, cfg.eps);
    // exactly ln B − ln(1 + Bε); that correction is below Bε by (Bε)²/2 ≈ 3e-20,
    // far under one ulp of ln B, so compare against the closed form instead
    let correction = (b as f64 * cfg.eps).ln_1p();
    assert!(correction <= b as f64 * cfg.eps);
    assert!(((b as f64).ln() - h - correction).abs() < 1e-14, "{h}");

    // 75/25 split over two bins
    let h = histogram_entropy(&histogram(&[[0.1; 3].as_slice(), &[0.9]].concat(), 2, 1.0), 1e-12);
    assert!((h - 0.5623351446188083).abs() < 1e-10);

    let zero = matrix(&g, 0, &[0.0; 6]);
    let e = info_complexity(&[zero], &g, &cfg, None).unwrap();
    assert_eq!((e.value, e.degenerate), (0.0, true));
}

#[test]
fn uniform_histogram_through_matrices() {
    // B = 6 bins, exactly one valid edge per bin with range fixed at 1
    let g = CircuitGraph::build(1).unwrap();
    let cfg = HistogramConfig { bins: 6, eps: 1e-12 };
    let v: Vec<f64> = (0..6).map(|i| (i as f64 + 0.5) / 6.0).collect();
    let e = info_complexity(&[matrix(&g, 0, &v)], &g, &cfg, Some(1.0)).unwrap();
    assert!((6f64.ln() - e.value - (6.0 * 1e-12f64).ln_1p()).abs() < 1e-14);
}

#[test]
fn kurtosis_identities() {
    let g = CircuitGraph::build(1).unwrap();
    let rad = matrix(&g, 0, &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    let k = dist_kurtosis(&[rad], &g).unwrap();
    assert!((k.value + 2.0).abs() < 1e-9);

    let flat = matrix(&g, 1, &[4.0; 6]);
    let rad = matrix(&g, 0, &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    let k = dist_kurtosis(&[rad, flat.clone()], &g).unwrap();
    assert_eq!(k.skipped, 1);
    assert!(dist_kurtosis(&[flat], &g).is_err());
}

#[test]
fn kurtosis_of_normal_draws() {
    let mut g = rng(2024);
    let v: Vec<f64> = (0..100_000).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
    assert!(excess_kurtosis(&v).unwrap().abs() < 0.1);
}

#[test]
fn diversity_examples() {
    let g = CircuitGraph::build(2).unwrap();
    let w = random_matrices(&g, 1, 5).remove(0);
    let d = diversity_score(&[w.clone(), w.clone()], &g).unwrap();
    assert_eq!(d.value, 0.0);
    let neg = scaled(std::slice::from_ref(&w), -1.0, 0.0, &g).remove(0);
    assert_eq!(diversity_score(&[w, neg], &g).unwrap().value, 2.0);
}

#[test]
fn diversity_matches_double_loop() {
    let g = CircuitGraph::build(2).unwrap();
    let ms = random_matrices(&g, 3, 11);
    let vs: Vec<Vec<f64>> = ms.iter().map(|m| m.valid_values(&g)).collect();
    let corr = |a: &[f64], b: &[f64]| {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va.sqrt() * vb.sqrt())
    };
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..3 {
        for j in 0..3 {
            if i < j {
                total += corr(&vs[i], &vs[j]);
                pairs += 1;
            }
        }
    }
    let d = diversity_score(&ms, &g).unwrap();
    assert_eq!(d.pairs, 3);
    assert!((d.value - (1.0 - total / pairs as f64)).abs() < 1e-12);
}

#[test]
fn diversity_skips_constant_samples() {
    let g = CircuitGraph::build(1).unwrap();
    let mut ms = random_matrices(&g, 3, 2);
    ms.push(matrix(&g, 3, &[1.0; 6]));
    let d = diversity_score(&ms, &g).unwrap();
    assert_eq!((d.pairs, d.skipped_samples), (3, 1));
    assert!(diversity_score(&ms[2..], &g).is_err());
}

#[test]
fn node_entropy_examples() {
    let g = CircuitGraph::build(2).unwrap();
    let ms = vec![matrix(&g, 0, &[1.0; 15])];
    let h = node_output_entropy(&ms, &g).unwrap();
    // H0 feeds 5 destinations, A1 4, F1 3, A2 2, F2 only the readout
    for (s, k) in [5usize, 4, 3, 2, 1].into_iter().enumerate() {
        assert!((h[s].unwrap() - (k as f64).ln()).abs() < 1e-12, "source {s}");
    }
    assert_eq!(h[4], Some(0.0));
    let zeros = vec![matrix(&g, 0, &[0.0; 15])];
    assert!(node_output_entropy(&zeros, &g).unwrap().iter().all(Option::is_none));
}

#[test]
fn node_entropy_matches_brute_force() {
    let g = CircuitGraph::build(3).unwrap();
    let ms = random_matrices(&g, 4, 8);
    let h = node_output_entropy(&ms, &g).unwrap();
    for (s, &h_s) in h.iter().enumerate() {
        let mut acc = 0.0;
        for m in &ms {
            let mut w = Vec::new();
            for d in 0..g.n_destinations() {
                if s <= d {
                    w.push(m.scores[s * g.n_destinations() + d].abs());
                }
            }
            let z: f64 = w.iter().sum();
            acc += w
                .iter()
                .map(|v| v / z)
                .map(|p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum::<f64>();
        }
        assert!((h_s.unwrap() - acc / ms.len() as f64).abs() < 1e-12, "source {s}");
    }
}

#[test]
fn relative_change_examples() {
    let g = CircuitGraph::build(1).unwrap();
    let base = random_matrices(&g, 3, 4);
    let same = relative_change(&base, &base, &g, DEFAULT_EPS_REL).unwrap();
    assert!(same.iter().all(|&v| v == 0.0));

    let doubled = scaled(&base, 2.0, 0.0, &g);
    let rc = relative_change(&base, &doubled, &g, DEFAULT_EPS_REL).unwrap();
    for e in g.edges() {
        assert!((rc[e.source * 3 + e.destination] - 1.0).abs() < 1e-9);
    }
    assert_eq!(rc[3 * 2], 0.0, "masked entry");

    let zero = vec![matrix(&g, 0, &[0.0; 6])];
    let rc = relative_change(&zero, &[matrix(&g, 0, &[1.0; 6])], &g, DEFAULT_EPS_REL).unwrap();
    assert!(rc.iter().all(|v| v.is_finite()));
    assert_eq!(rc[0], 1e12);
}

fn report(model: &str, dataset: &str, alpha: f64, act: f64, info: f64, kurt: f64) -> MetricsReport {
    MetricsReport {
        model: model.into(),
        dataset: dataset.into(),
        alpha,
        t_cut: 1,
        n_samples: 1,
        act_intens: act,
        info_complex: info,
        info_degenerate: false,
        dist_kurt: kurt,
        kurtosis_skipped: 0,
        histogram: HistogramConfig::default(),
        range_max: 1.0,
        node_entropy: vec![],
        diversity: None,
    }
}

#[test]
fn comparison_flags_follow_arrows() {
    // published Deepseek-Math values on MATH at α = 0.03
    let base = [report("sft", "MATH", 0.03, 2.29e-3, 4.0, 3.93e2)];
    let rl = [report("rl", "MATH", 0.03, 2.64e-3, 4.0, 2.53e2)];
    let rows = build_comparison(&base, &rl).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0].metric, rows[0].better), (Metric::ActIntens, Some(Side::Rl)));
    assert_eq!((rows[1].metric, rows[1].better), (Metric::InfoComplex, None));
    assert_eq!((rows[2].metric, rows[2].better), (Metric::DistKurt, Some(Side::Rl)));

    let other = [report("rl", "GSM8K", 0.03, 1.0, 1.0, 1.0)];
    assert!(build_comparison(&base, &other).is_err());
}

proptest! {
    #[test]
    fn act_intensity_is_positively_homogeneous(seed in 0u64..1000, k in -20i32..20, c in 0.01f64..100.0) {
        let g = CircuitGraph::build(2).unwrap();
        let ms = random_matrices(&g, 3, seed);
        let base = act_intensity(&ms, &g).unwrap();
        // powers of two scale every term exactly
        let p = 2f64.powi(k);
        prop_assert_eq!(act_intensity(&scaled(&ms, p, 0.0, &g), &g).unwrap(), p * base);
        // otherwise each of the n terms rounds once when scaled and the two
        // sequential sums drift by at most (n - 1) half-ulps each
        let n = 3.0 * g.edge_count() as f64;
        let got = act_intensity(&scaled(&ms, c, 0.0, &g), &g).unwrap();
        prop_assert!((got - c * base).abs() <= (n + 2.0) * f64::EPSILON * c * base);
    }

    #[test]
    fn kurtosis_is_affine_invariant(seed in 0u64..1000, a in 0.1f64..10.0, neg in any::<bool>(), b in -5.0f64..5.0, k in -10i32..10) {
        let g = CircuitGraph::build(2).unwrap();
        let ms = random_matrices(&g, 2, seed);
        let base = dist_kurtosis(&ms, &g).unwrap().value;
        let sign = if neg { -1.0 } else { 1.0 };
        let exact = dist_kurtosis(&scaled(&ms, sign * 2f64.powi(k), 0.0, &g), &g).unwrap().value;
        prop_assert_eq!(exact, base);
        let got = dist_kurtosis(&scaled(&ms, sign * a, b, &g), &g).unwrap().value;
        prop_assert!((got - base).abs() <= 1e-9 * (1.0 + base.abs()), "{} vs {}", got, base);
    }

    #[test]
    fn diversity_ignores_positive_affine_rescaling(seed in 0u64..1000, scales in prop::collection::vec((0.1f64..10.0, -3.0f64..3.0), 4)) {
        let g = CircuitGraph::build(2).unwrap();
        let ms = random_matrices(&g, 4, seed);
        let moved: Vec<_> = ms
            .iter()
            .zip(&scales)
            .map(|(m, &(a, b))| scaled(std::slice::from_ref(m), a, b, &g).remove(0))
            .collect();
        let d0 = diversity_score(&ms, &g).unwrap().value;
        let d1 = diversity_score(&moved, &g).unwrap().value;
        prop_assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn info_complexity_is_permutation_invariant_and_bounded(seed in 0u64..1000, bins in 1usize..300, shift in 1usize..6) {
        let g = CircuitGraph::build(2).unwrap();
        let ms = random_matrices(&g, 6, seed);
        let cfg = HistogramConfig { bins, eps: 1e-12 };
        let h = info_complexity(&ms, &g, &cfg, None).unwrap().value;
        prop_assert!(h <= (bins as f64).ln() + 1e-12);
        prop_assert!(h >= -1e-9);
        let mut rotated = ms.clone();
        rotated.rotate_left(shift);
        let rotated: Vec<_> = rotated
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let mut v = m.valid_values(&g);
                v.reverse();
                matrix(&g, k, &v)
            })
            .collect();
        prop_assert_eq!(info_complexity(&rotated, &g, &cfg, None).unwrap().value, h);
    }
}
