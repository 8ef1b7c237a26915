//! Answer extraction and comparison for the correctness filter.

use std::str::FromStr;
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Extractor {
    /// Contents of the last `\boxed{...}`.
    Boxed,
    /// The last number (integer, decimal or `a/b`) in the text.
    #[default]
    LastNumber,
    /// The whole text.
    Exact,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?(?:\s*/\s*-?\d+(?:\.\d+)?)?").unwrap())
}

fn frac_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(-?)\\d?frac\{([^{}]*)\}\{([^{}]*)\}$").unwrap())
}

/// Last balanced `\boxed{...}` body.
fn last_boxed(text: &str) -> Option<&str> {
    let start = text.rfind("\\boxed{")? + "\\boxed{".len();
    let mut depth = 1usize;
    for (i, c) in text[start..].char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn extract(text: &str, extractor: Extractor) -> Option<String> {
    let found = match extractor {
        Extractor::Boxed => last_boxed(text).map(str::to_string),
        Extractor::LastNumber => number_re().find_iter(text).last().map(|m| m.as_str().to_string()),
        Extractor::Exact => Some(text.to_string()),
    };
    found.map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mantissa = BigInt::from_str(&format!("{int}{frac}")).ok()?;
    let scale = num_traits::pow(BigInt::from(10), frac.len());
    let value = BigRational::new(mantissa, scale);
    Some(if neg { -value } else { value })
}

/// Exact rational value of an integer, decimal, `a/b` or `\frac{a}{b}`
/// string; thousands separators are ignored.
pub fn parse_number(s: &str) -> Option<BigRational> {
    let s = s.trim().replace(',', "");
    let (num, den) = if let Some(c) = frac_re().captures(&s) {
        let sign = if &c[1] == "-" { "-" } else { "" };
        (format!("{sign}{}", &c[2]), c[3].to_string())
    } else if let Some((a, b)) = s.split_once('/') {
        (a.to_string(), b.to_string())
    } else {
        return parse_decimal(&s);
    };
    let den = parse_decimal(&den)?;
    if den.is_zero() {
        return None;
    }
    Some(parse_decimal(&num)? / den)
}

/// Numeric comparison when both sides parse as numbers, otherwise string
/// equality after trimming. Unextractable answers are wrong.
pub fn check_answer(generation: &str, gold: &str, extractor: Extractor) -> bool {
    let Some(answer) = extract(generation, extractor) else {
        return false;
    };
    match (parse_number(&answer), parse_number(gold)) {
        (Some(a), Some(b)) => a == b,
        _ => answer == gold.trim(),
    }
}
