//! BLEU for generation and translation, and RNN-LM perplexities.

mod bleu;
mod lm;

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu_generation, bleu_translation, translation_stats, BleuWeights, NGramStats};
pub use lm::{fwd_rev_report, perplexity, train_rnnlm, LmConfig, PplReport, RnnLm};

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("n-gram order must be at least 1, got {0}")]
    Order(usize),
    #[error("{0} candidates for {1} references")]
    Misaligned(usize, usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One language row of a generation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReportRow {
    pub lang: String,
    /// `(N, BLEU-N)` pairs.
    pub bleu: Vec<(usize, f64)>,
    pub ppl: Option<PplReport>,
}

/// Generation BLEU-2..5 for one language, with optional perplexities.
pub fn generation_row<T: std::hash::Hash + Eq>(
    lang: &str,
    samples: &[Vec<T>],
    references: &[Vec<T>],
    weights: BleuWeights,
    ppl: Option<PplReport>,
) -> Result<GenReportRow, EvalError> {
    let bleu = (2..=5)
        .map(|n| bleu_generation(samples, references, n, weights).map(|s| (n, s)))
        .collect::<Result<_, _>>()?;
    Ok(GenReportRow {
        lang: lang.to_owned(),
        bleu,
        ppl,
    })
}

/// Plain-text table: one row per language, BLEU columns then F-PPL, R-PPL
/// and the real-test PPL.
pub fn format_report(rows: &[GenReportRow]) -> String {
    let mut out = String::new();
    let orders: Vec<usize> = rows.first().map(|r| r.bleu.iter().map(|b| b.0).collect()).unwrap_or_default();
    let _ = write!(out, "{:<6}", "lang");
    for n in &orders {
        let _ = write!(out, " {:>8}", format!("B-{n}"));
    }
    let _ = writeln!(out, " {:>10} {:>10} {:>10}", "F-PPL", "R-PPL", "T-PPL");
    for r in rows {
        let _ = write!(out, "{:<6}", r.lang);
        for (_, s) in &r.bleu {
            let _ = write!(out, " {s:>8.2}");
        }
        match r.ppl {
            Some(p) => {
                let _ = writeln!(out, " {:>10.2} {:>10.2} {:>10.2}", p.forward, p.reverse, p.real);
            }
            None => {
                let _ = writeln!(out, " {:>10} {:>10} {:>10}", "-", "-", "-");
            }
        }
    }
    out
}
