//! Tokenization, vocabularies, pair filtering, batching and input noise.

mod noise;
mod tokenize;
mod vocab;

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use noise::{apply_noise, NoiseConfig};
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, BOS_L0, BOS_L1, EOS, PAD, RESERVED, UNK};

/// One of the two languages of a bilingual model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    L0,
    L1,
}

impl Lang {
    pub const BOTH: [Lang; 2] = [Lang::L0, Lang::L1];

    pub fn index(self) -> usize {
        match self {
            Lang::L0 => 0,
            Lang::L1 => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Lang> {
        match i {
            0 => Some(Lang::L0),
            1 => Some(Lang::L1),
            _ => None,
        }
    }

    pub fn other(self) -> Lang {
        match self {
            Lang::L0 => Lang::L1,
            Lang::L1 => Lang::L0,
        }
    }

    /// Decoder start symbol for this language.
    pub fn bos(self) -> usize {
        match self {
            Lang::L0 => BOS_L0,
            Lang::L1 => BOS_L1,
        }
    }
}

impl std::fmt::Display for Lang {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "l{}", self.index())
    }
}

/// Sentence as vocabulary ids, without the trailing EOS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub lang: Lang,
}

impl TokenSeq {
    pub fn new(ids: Vec<usize>, lang: Lang) -> Self {
        TokenSeq { ids, lang }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids followed by EOS, the form used for decoder targets.
    pub fn with_eos(&self) -> Vec<usize> {
        let mut v = self.ids.clone();
        v.push(EOS);
        v
    }
}

/// Drop pairs with an empty side, a side longer than `max_len` tokens, or a
/// length ratio strictly greater than `max_ratio`.
pub fn filter_pairs<T>(pairs: Vec<(Vec<T>, Vec<T>)>, max_len: usize, max_ratio: f64) -> Vec<(Vec<T>, Vec<T>)> {
    pairs
        .into_iter()
        .filter(|(a, b)| {
            let (la, lb) = (a.len(), b.len());
            if la == 0 || lb == 0 || la > max_len || lb > max_len {
                return false;
            }
            la.max(lb) as f64 / la.min(lb) as f64 <= max_ratio
        })
        .collect()
}

/// Right-padded id matrix with a 0/1 mask of real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub ids: Vec<usize>,
    pub mask: Vec<f64>,
    pub lens: Vec<usize>,
    pub batch: usize,
    pub max_len: usize,
}

impl PaddedBatch {
    /// Ids at timestep `t` across the batch.
    pub fn column(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| self.ids[b * self.max_len + t]).collect()
    }

    pub fn mask_column(&self, t: usize) -> Vec<f64> {
        (0..self.batch).map(|b| self.mask[b * self.max_len + t]).collect()
    }
}

/// Pad `seqs` to `max_len` with PAD. Sequences longer than `max_len` are an error.
pub fn pad_batch(seqs: &[Vec<usize>], max_len: usize) -> Result<PaddedBatch, String> {
    if seqs.is_empty() {
        return Err("empty batch".into());
    }
    let mut ids = vec![PAD; seqs.len() * max_len];
    let mut mask = vec![0.0; seqs.len() * max_len];
    for (b, s) in seqs.iter().enumerate() {
        if s.len() > max_len {
            return Err(format!("sequence of length {} exceeds max_len {max_len}", s.len()));
        }
        for (t, &id) in s.iter().enumerate() {
            ids[b * max_len + t] = id;
            mask[b * max_len + t] = 1.0;
        }
    }
    Ok(PaddedBatch {
        ids,
        mask,
        lens: seqs.iter().map(Vec::len).collect(),
        batch: seqs.len(),
        max_len,
    })
}

/// One sentence per line; blank lines are kept as empty sentences.
pub fn read_lines(path: &Path) -> io::Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::to_owned).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> io::Result<()> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l.as_ref());
        out.push('\n');
    }
    fs::write(path, out)
}

/// Read an aligned corpus from two files with the same number of lines.
pub fn read_parallel(a: &Path, b: &Path) -> io::Result<Vec<(String, String)>> {
    let (la, lb) = (read_lines(a)?, read_lines(b)?);
    if la.len() != lb.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{} has {} lines but {} has {}", a.display(), la.len(), b.display(), lb.len()),
        ));
    }
    Ok(la.into_iter().zip(lb).collect())
}
