use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS_L0: usize = 1;
pub const BOS_L1: usize = 2;
pub const EOS: usize = 3;
pub const UNK: usize = 4;
/// Number of reserved ids preceding the content words.
pub const RESERVED: usize = 5;

const SPECIAL_NAMES: [&str; RESERVED] = ["<pad>", "<bos0>", "<bos1>", "</s>", "<unk>"];

/// Bijection between tokens and ids, with the reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Vocabulary over the given content words, in order.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Self {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        for w in words {
            let w = w.as_ref();
            if !tokens.iter().any(|t| t == w) {
                tokens.push(w.to_owned());
            }
        }
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    /// Keep the `max_size` most frequent tokens; ties go to the
    /// lexicographically smaller token.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], max_size: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| !SPECIAL_NAMES.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        let words: Vec<&str> = ranked.into_iter().map(|(t, _)| t).collect();
        Self::from_words(&words)
    }

    /// Total size including reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - RESERVED
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Content words in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Surface tokens for `ids`, stopping at EOS and skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS_L0 && i != BOS_L1)
            .map(|&i| self.token(i).unwrap_or(SPECIAL_NAMES[UNK]).to_owned())
            .collect()
    }

    /// One content word per line; line `n` (0-based) holds id `n + RESERVED`.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut s = String::new();
        for w in self.words() {
            s.push_str(w);
            s.push('\n');
        }
        fs::write(path, s)
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let words: Vec<&str> = text.lines().collect();
        let v = Self::from_words(&words);
        if v.content_len() != words.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "duplicate or reserved token in vocabulary file"));
        }
        Ok(v)
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_tokens(self.tokens)
    }
}
