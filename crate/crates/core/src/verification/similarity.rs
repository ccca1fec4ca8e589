use serde::{Deserialize, Serialize};

use crate::backends::mock::tokenize;

pub const SEMANTIC_WEIGHT: f64 = 0.7;
pub const TOKEN_WEIGHT: f64 = 0.3;

/// Cosine of two vectors; zero when either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity with negative values floored at zero.
pub fn semantic_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b).max(0.0)
}

/// `1 - lev(a, b) / max(|a|, |b|)` over characters; 0 when exactly one side
/// is empty.
pub fn levenshtein_ratio(a: &str, b: &str) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => strsim::normalized_levenshtein(a, b),
    }
}

/// Token-set ratio. Tokens are lowercase alphanumeric runs; with `I` the
/// sorted intersection and `A`, `B` the sorted remainders of each side,
/// the score is the best Levenshtein ratio among `(I, I+A)`, `(I, I+B)` and
/// `(I+A, I+B)`. A side without tokens scores 0.
pub fn token_set_similarity(a: &str, b: &str) -> f64 {
    let mut ta = tokenize(a);
    let mut tb = tokenize(b);
    ta.sort();
    ta.dedup();
    tb.sort();
    tb.dedup();
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let common: Vec<&str> = ta
        .iter()
        .filter(|t| tb.binary_search(t).is_ok())
        .map(String::as_str)
        .collect();
    let only_a: Vec<&str> = ta
        .iter()
        .filter(|t| tb.binary_search(t).is_err())
        .map(String::as_str)
        .collect();
    let only_b: Vec<&str> = tb
        .iter()
        .filter(|t| ta.binary_search(t).is_err())
        .map(String::as_str)
        .collect();
    let joined = |parts: &[&[&str]]| {
        parts
            .iter()
            .flat_map(|p| p.iter().copied())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let t0 = joined(&[&common]);
    let t1 = joined(&[&common, &only_a]);
    let t2 = joined(&[&common, &only_b]);
    [(&t0, &t1), (&t0, &t2), (&t1, &t2)]
        .iter()
        .map(|(x, y)| levenshtein_ratio(x, y))
        .fold(0.0, f64::max)
}

/// Plain normalised Levenshtein over the lowercased token streams.
pub fn plain_token_similarity(a: &str, b: &str) -> f64 {
    let a = tokenize(a).join(" ");
    let b = tokenize(b).join(" ");
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    levenshtein_ratio(&a, &b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSimilarity {
    #[default]
    TokenSet,
    Levenshtein,
}

impl TokenSimilarity {
    pub fn score(self, a: &str, b: &str) -> f64 {
        match self {
            TokenSimilarity::TokenSet => token_set_similarity(a, b),
            TokenSimilarity::Levenshtein => plain_token_similarity(a, b),
        }
    }
}

pub fn entity_similarity(semantic: f64, token: f64) -> f64 {
    SEMANTIC_WEIGHT * semantic + TOKEN_WEIGHT * token
}
