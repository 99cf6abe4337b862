use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Exponent weights for the n-gram precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuWeights {
    /// `w_n = 1/N`, the standard geometric mean.
    #[default]
    Uniform,
    /// `w_n = 1/n`, as the formula is sometimes printed.
    Harmonic,
}

impl BleuWeights {
    fn weight(self, n: usize, max_n: usize) -> f64 {
        match self {
            BleuWeights::Uniform => 1.0 / max_n as f64,
            BleuWeights::Harmonic => 1.0 / n as f64,
        }
    }
}

/// Clipped n-gram matches and candidate n-gram totals, index `n - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
}

impl NGramStats {
    pub fn new(max_n: usize) -> Self {
        NGramStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
        }
    }

    pub fn precision(&self, n: usize) -> f64 {
        let t = self.totals[n - 1];
        if t == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / t as f64
        }
    }

    fn score(&self, weights: BleuWeights) -> f64 {
        let max_n = self.matches.len();
        let mut log_sum = 0.0;
        for n in 1..=max_n {
            let p = self.precision(n);
            if p == 0.0 {
                return 0.0;
            }
            log_sum += weights.weight(n, max_n) * p.ln();
        }
        100.0 * log_sum.exp()
    }
}

fn counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-N for generated text with brevity penalty fixed at 1.
/// Every reference is available to every candidate: an n-gram's count is
/// clipped by its largest count in any single reference.
pub fn bleu_generation<T: Hash + Eq>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    weights: BleuWeights,
) -> Result<f64, EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::Empty("candidate list"));
    }
    if references.is_empty() {
        return Err(EvalError::Empty("reference corpus"));
    }
    if max_n == 0 {
        return Err(EvalError::Order(max_n));
    }
    let mut stats = NGramStats::new(max_n);
    for n in 1..=max_n {
        let mut best: HashMap<&[T], u64> = HashMap::new();
        for r in references {
            for (g, c) in counts(r, n) {
                let e = best.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        for cand in candidates {
            for (g, c) in counts(cand, n) {
                stats.totals[n - 1] += c;
                stats.matches[n - 1] += c.min(best.get(g).copied().unwrap_or(0));
            }
        }
    }
    Ok(stats.score(weights))
}

/// Standard corpus BLEU-4 against one aligned reference per candidate,
/// with brevity penalty `min(1, exp(1 - r/c))`.
pub fn bleu_translation<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::Misaligned(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(EvalError::Empty("candidate list"));
    }
    let stats = translation_stats(candidates, references, 4);
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * stats.score(BleuWeights::Uniform))
}

pub fn translation_stats<T: Hash + Eq>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> NGramStats {
    let mut stats = NGramStats::new(max_n);
    for (cand, r) in candidates.iter().zip(references) {
        for n in 1..=max_n {
            let rc = counts(r, n);
            for (g, c) in counts(cand, n) {
                stats.totals[n - 1] += c;
                stats.matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn subset_of_references_scores_100() {
        let refs = vec![toks("a b c d e"), toks("f g h i j k"), toks("x y z w v")];
        for n in 2..=5 {
            let s = bleu_generation(&refs[..2], &refs, n, BleuWeights::Uniform).unwrap();
            assert!((s - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn short_candidate_ignores_brevity() {
        let s = bleu_generation(&[toks("the cat sat")], &[toks("the cat sat on the mat")], 3, BleuWeights::Uniform).unwrap();
        assert!((s - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unseen_word_hand_count() {
        let s = bleu_generation(&[toks("the cat barked")], &[toks("the cat sat on the mat")], 2, BleuWeights::Uniform).unwrap();
        let expected = 100.0 * (0.5 * ((2.0f64 / 3.0).ln() + 0.5f64.ln())).exp();
        assert!((s - expected).abs() < 1e-9);
    }

    #[test]
    fn harmonic_weights_differ() {
        let c = [toks("the cat barked")];
        let r = [toks("the cat sat on the mat")];
        let s = bleu_generation(&c, &r, 2, BleuWeights::Harmonic).unwrap();
        let expected = 100.0 * ((2.0f64 / 3.0).ln() + 0.5 * 0.5f64.ln()).exp();
        assert!((s - expected).abs() < 1e-9);
    }

    #[test]
    fn translation_identical_and_empty() {
        let refs = vec![toks("a b c d e"), toks("f g h i")];
        assert!((bleu_translation(&refs, &refs).unwrap() - 100.0).abs() < 1e-9);
        let empty = vec![Vec::<String>::new(), Vec::new()];
        assert_eq!(bleu_translation(&empty, &refs).unwrap(), 0.0);
        assert!(bleu_generation::<String>(&[], &refs, 2, BleuWeights::Uniform).is_err());
    }

    #[test]
    fn half_length_prefix_gets_brevity_factor() {
        let refs = vec![toks("a b c d e f g h i j k l m n o p")];
        let cands = vec![toks("a b c d e f g h")];
        let s = bleu_translation(&cands, &refs).unwrap();
        assert!((s - 100.0 * (-1.0f64).exp()).abs() < 1e-9);
    }
}
