use csc::pipeline::{
    apply_filters, check_answer, mean_length, read_jsonl, to_jsonl, truncation_length, verdict, Extractor,
    FilterConfig, SampleRecord, Verdict,
};
use proptest::prelude::*;

fn record(i: usize, tb: usize, tr: usize, base_ok: bool, rl_ok: bool) -> SampleRecord {
    let mut r = SampleRecord::new(format!("q{i}"), vec![1, 2], "7");
    r.base_tokens = vec![3; tb];
    r.rl_tokens = vec![4; tr];
    r.base_correct = base_ok;
    r.rl_correct = rl_ok;
    r
}

fn records() -> impl Strategy<Value = Vec<SampleRecord>> {
    prop::collection::vec(
        (
            0usize..60,
            0usize..60,
            prop::bool::weighted(0.9),
            prop::bool::weighted(0.9),
        ),
        1..40,
    )
    .prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (tb, tr, b, r))| record(i, tb, tr, b, r))
            .collect()
    })
}

fn configs() -> impl Strategy<Value = FilterConfig> {
    (0.01f64..1.0, 0.05f64..1.0, 1.0f64..3.0, 0.05f64..0.95).prop_map(|(alpha, beta, gamma, delta)| FilterConfig {
        alpha,
        beta,
        gamma,
        delta,
    })
}

proptest! {
    #[test]
    fn filtering_is_idempotent(mut recs in records(), cfg in configs()) {
        prop_assume!(recs.iter().any(|r| r.correct()));
        let m1 = apply_filters(&mut recs, &cfg).unwrap();
        let first: Vec<_> = recs.iter().map(|r| r.verdict).collect();
        let m2 = apply_filters(&mut recs, &cfg).unwrap();
        let second: Vec<_> = recs.iter().map(|r| r.verdict).collect();
        prop_assert_eq!(m1.to_bits(), m2.to_bits());
        prop_assert_eq!(first, second);
    }

    #[test]
    fn verdicts_partition_and_kept_satisfy_predicates(mut recs in records(), cfg in configs()) {
        prop_assume!(recs.iter().any(|r| r.correct()));
        let ids: Vec<_> = recs.iter().map(|r| r.id.clone()).collect();
        let mean = apply_filters(&mut recs, &cfg).unwrap();
        prop_assert_eq!(ids, recs.iter().map(|r| r.id.clone()).collect::<Vec<_>>());
        let counted: usize = Verdict::ALL
            .iter()
            .map(|v| recs.iter().filter(|r| r.verdict == Some(*v)).count())
            .sum();
        prop_assert_eq!(counted, recs.len());
        for r in &recs {
            let (tb, tr) = (r.t_base() as f64, r.t_rl() as f64);
            let in_bounds = |t: f64| cfg.beta * mean <= t && t <= cfg.gamma * mean;
            let balanced = (tb - tr).abs() / ((tb + tr) / 2.0) < cfg.delta;
            let all = r.correct() && in_bounds(tb) && in_bounds(tr) && balanced;
            prop_assert_eq!(r.verdict == Some(Verdict::Kept), all, "{:?}", r.verdict);
        }
    }

    #[test]
    fn mean_length_matches_brute_force(pairs in prop::collection::vec((0usize..500, 0usize..500), 100)) {
        let recs: Vec<_> = pairs.iter().enumerate().map(|(i, &(a, b))| record(i, a, b, true, true)).collect();
        // integer-exact oracle: T̄ = Σ(a+b) / (2n)
        let total: usize = pairs.iter().map(|(a, b)| a + b).sum();
        let expected = total as f64 / (2 * pairs.len()) as f64;
        let got = mean_length(&recs).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn truncation_is_floor_clamped(mean in 0.0f64..1000.0, alpha in 0.001f64..2.0) {
        let t = truncation_length(mean, alpha);
        prop_assert!(t >= 1);
        prop_assert!(t as f64 <= (alpha * mean).max(1.0));
        prop_assert!((t + 1) as f64 > alpha * mean);
    }

    #[test]
    fn decimals_equal_their_fractions(n in -10_000i64..10_000, i in 0u32..5, j in 0u32..5) {
        // n / (2^i 5^j) has a terminating decimal; write it out with integer arithmetic
        let d = 2i64.pow(i) * 5i64.pow(j);
        let places = i.max(j);
        let scaled = n * 10i64.pow(places) / d;
        let sign = if scaled < 0 { "-" } else { "" };
        let mag = scaled.unsigned_abs();
        let p = 10u64.pow(places);
        let decimal = if places == 0 {
            format!("{sign}{mag}")
        } else {
            format!("{sign}{}.{:0width$}", mag / p, mag % p, width = places as usize)
        };
        let text = format!("so the answer is \\boxed{{{decimal}}}");
        let fraction = format!("{n}/{d}");
        prop_assert!(check_answer(&text, &fraction, Extractor::Boxed), "{} vs {}", decimal, fraction);
        let off = format!("{}/{d}", n + 1);
        prop_assert!(!check_answer(&text, &off, Extractor::Boxed));
    }
}

#[test]
fn boundary_is_inclusive_for_lengths() {
    let cfg = FilterConfig {
        alpha: 0.5,
        beta: 0.5,
        gamma: 2.0,
        delta: 0.5,
    };
    // T̄ = 15: T_min = 7.5, T_max = 30
    assert_eq!(verdict(&record(0, 8, 8, true, true), 15.0, &cfg), Verdict::Kept);
    assert_eq!(verdict(&record(0, 30, 30, true, true), 15.0, &cfg), Verdict::Kept);
    assert_eq!(verdict(&record(0, 31, 30, true, true), 15.0, &cfg), Verdict::TooLong);
}

#[test]
fn empty_generations_are_never_kept() {
    let mut recs = vec![record(0, 0, 0, true, true)];
    apply_filters(&mut recs, &FilterConfig::default()).unwrap();
    assert_eq!(recs[0].verdict, Some(Verdict::LengthMismatch));
}

#[test]
fn mean_uses_only_correct_records() {
    let mut recs = vec![record(0, 10, 10, true, true), record(1, 100, 100, false, true)];
    let mean = apply_filters(&mut recs, &FilterConfig::default()).unwrap();
    assert_eq!(mean, 10.0);
    assert_eq!(recs[1].verdict, Some(Verdict::WrongAnswer));
}

#[test]
fn nothing_correct_is_empty_after_filter() {
    let mut recs = vec![record(0, 10, 10, false, true)];
    assert!(matches!(
        apply_filters(&mut recs, &FilterConfig::default()),
        Err(csc::Error::EmptyAfterFilter)
    ));
}

#[test]
fn jsonl_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let input = r#"{"id":"a","prompt_tokens":[1,2],"gold":"3","base_tokens":[4],"rl_tokens":[5,6],"base_text":"3","rl_text":"x 3"}
{"id":"b","prompt_tokens":[7],"gold":"1/2"}
"#;
    std::fs::write(&path, input).unwrap();
    let recs = read_jsonl(&path).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0].rl_tokens, vec![5, 6]);
    assert!(recs[1].base_tokens.is_empty());
    std::fs::write(&path, to_jsonl(&recs).unwrap()).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), recs);

    std::fs::write(&path, "{\"id\": 3}\n").unwrap();
    assert!(read_jsonl(&path).is_err());
}
