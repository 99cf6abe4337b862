//! Synthetic cipher language pairs with an exact translation oracle.
//!
//! Sentences of language 0 are drawn from a small template grammar
//! (determiner, adjective, noun, verb, preposition, adverb slots). Language 1
//! maps every word through a fixed bijection and swaps adjacent word pairs at
//! even positions, so the two languages differ in word order and a
//! word-by-word dictionary alone cannot translate them.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Class {
    Det,
    Adj,
    Noun,
    Verb,
    Prep,
    Adv,
}

use Class::*;

const TEMPLATES: &[&[Class]] = &[
    &[Det, Noun, Verb],
    &[Det, Noun, Verb, Adv],
    &[Det, Adj, Noun, Verb],
    &[Det, Noun, Verb, Det, Noun],
    &[Det, Adj, Noun, Verb, Adv],
    &[Det, Adj, Noun, Verb, Det, Noun],
    &[Det, Noun, Verb, Prep, Det, Noun],
    &[Det, Adj, Noun, Verb, Det, Adj, Noun],
    &[Det, Noun, Verb, Prep, Det, Adj, Noun],
    &[Det, Adj, Noun, Verb, Prep, Det, Adj, Noun],
    &[Det, Adj, Noun, Verb, Det, Adj, Noun, Adv],
];

/// Share of the lexicon given to each word class.
const CLASS_SHARES: [(Class, f64); 6] = [(Det, 0.1), (Adj, 0.2), (Noun, 0.3), (Verb, 0.2), (Prep, 0.1), (Adv, 0.1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CipherParams {
    /// Content words per language.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CipherParams {
    fn default() -> Self {
        CipherParams {
            vocab_size: 50,
            min_len: 3,
            max_len: 8,
            seed: 7,
        }
    }
}

/// A concrete cipher pair: lexicons, word classes and the bijection.
#[derive(Debug, Clone)]
pub struct CipherSpec {
    pub params: CipherParams,
    words0: Vec<String>,
    words1: Vec<String>,
    /// `perm[i]` is the language-1 index of language-0 word `i`.
    perm: Vec<usize>,
    classes: HashMap<Class, Vec<usize>>,
    index0: HashMap<String, usize>,
    index1: HashMap<String, usize>,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Two or more consonant-vowel syllables spelling `i` in base 70.
fn syllables(mut i: usize) -> String {
    let mut s = String::new();
    for _ in 0..2 {
        let d = i % 70;
        s.push(CONSONANTS[d / 5] as char);
        s.push(VOWELS[d % 5] as char);
        i /= 70;
    }
    while i > 0 {
        let d = i % 70;
        s.push(CONSONANTS[d / 5] as char);
        s.push(VOWELS[d % 5] as char);
        i /= 70;
    }
    s
}

impl CipherSpec {
    pub fn new(params: CipherParams) -> Result<Self, String> {
        if params.vocab_size < CLASS_SHARES.len() {
            return Err(format!("vocab_size must be at least {}", CLASS_SHARES.len()));
        }
        if params.min_len > params.max_len || !TEMPLATES.iter().any(|t| (params.min_len..=params.max_len).contains(&t.len())) {
            return Err(format!("no template with length in [{}, {}]", params.min_len, params.max_len));
        }
        let v = params.vocab_size;
        let mut classes: HashMap<Class, Vec<usize>> = HashMap::new();
        let mut next = 0;
        for (i, (class, share)) in CLASS_SHARES.iter().enumerate() {
            let remaining_classes = CLASS_SHARES.len() - i - 1;
            let n = if remaining_classes == 0 {
                v - next
            } else {
                ((v as f64 * share).round() as usize).clamp(1, v - next - remaining_classes)
            };
            classes.insert(*class, (next..next + n).collect());
            next += n;
        }
        let words0: Vec<String> = (0..v).map(|i| format!("{}o", syllables(i))).collect();
        let words1: Vec<String> = (0..v).map(|i| format!("e{}", syllables(i))).collect();
        let mut perm: Vec<usize> = (0..v).collect();
        perm.shuffle(&mut derive(params.seed, "cipher-bijection"));
        let index0 = words0.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let index1 = words1.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(CipherSpec {
            params,
            words0,
            words1,
            perm,
            classes,
            index0,
            index1,
        })
    }

    pub fn lexicon(&self, lang: usize) -> &[String] {
        if lang == 0 {
            &self.words0
        } else {
            &self.words1
        }
    }

    /// Language-1 word for a language-0 word; unknown words pass through.
    pub fn map_word(&self, w: &str) -> String {
        match self.index0.get(w) {
            Some(&i) => self.words1[self.perm[i]].clone(),
            None => w.to_owned(),
        }
    }

    pub fn unmap_word(&self, w: &str) -> String {
        match self.index1.get(w) {
            Some(&j) => {
                let i = self.perm.iter().position(|&p| p == j).expect("bijection");
                self.words0[i].clone()
            }
            None => w.to_owned(),
        }
    }

    /// Exact translation from language 0 to language 1.
    pub fn oracle_translate<S: AsRef<str>>(&self, s: &[S]) -> Vec<String> {
        let mapped: Vec<String> = s.iter().map(|w| self.map_word(w.as_ref())).collect();
        swap_pairs(mapped)
    }

    /// Exact translation from language 1 back to language 0.
    pub fn oracle_inverse<S: AsRef<str>>(&self, t: &[S]) -> Vec<String> {
        let swapped = swap_pairs(t.iter().map(|w| w.as_ref().to_owned()).collect());
        swapped.iter().map(|w| self.unmap_word(w)).collect()
    }

    /// Word-by-word translation without reordering (the dictionary baseline).
    pub fn word_by_word<S: AsRef<str>>(&self, s: &[S]) -> Vec<String> {
        s.iter().map(|w| self.map_word(w.as_ref())).collect()
    }

    fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<String> {
        let templates: Vec<&&[Class]> = TEMPLATES
            .iter()
            .filter(|t| (self.params.min_len..=self.params.max_len).contains(&t.len()))
            .collect();
        let t = templates[rng.random_range(0..templates.len())];
        t.iter()
            .map(|c| {
                let pool = &self.classes[c];
                self.words0[pool[rng.random_range(0..pool.len())]].clone()
            })
            .collect()
    }

    /// `n` aligned pairs with `oracle_translate(l0[i]) == l1[i]`.
    pub fn make_corpus(&self, n: usize, seed: u64) -> ParallelCorpus {
        let mut rng = seeded(seed);
        let l0: Vec<Vec<String>> = (0..n).map(|_| self.sample_sentence(&mut rng)).collect();
        let l1 = l0.iter().map(|s| self.oracle_translate(s)).collect();
        ParallelCorpus { l0, l1 }
    }

    /// Word2vec-format embeddings for both lexicons: language-0 word `i` and
    /// its image `π(i)` share the base vector `e_i` (one-hot when the lexicon
    /// fits in `dim`, random Gaussian otherwise), plus independent noise.
    pub fn cipher_embeddings(&self, dim: usize, noise: f64, seed: u64) -> (String, String) {
        let v = self.params.vocab_size;
        let mut rng = seeded(seed);
        let base: Vec<Vec<f64>> = (0..v)
            .map(|i| {
                if v <= dim {
                    let mut e = vec![0.0; dim];
                    e[i] = 1.0;
                    e
                } else {
                    crate::tensor::Tensor::randn(&[dim], 1.0 / (dim as f64).sqrt(), &mut rng).to_vec()
                }
            })
            .collect();
        let mut render = |words: &[String], index_of: &dyn Fn(usize) -> usize| {
            let mut s = format!("{v} {dim}\n");
            for (i, w) in words.iter().enumerate() {
                s.push_str(w);
                for &x in &base[index_of(i)] {
                    let jitter: f64 = rng.random_range(-noise..=noise);
                    write!(s, " {}", x + jitter).unwrap();
                }
                s.push('\n');
            }
            s
        };
        let e0 = render(&self.words0, &|i| i);
        let inv: Vec<usize> = {
            let mut inv = vec![0; v];
            for (i, &p) in self.perm.iter().enumerate() {
                inv[p] = i;
            }
            inv
        };
        let e1 = render(&self.words1, &|j| inv[j]);
        (e0, e1)
    }
}

/// Swap `(0,1), (2,3), ...`; an odd final word stays put. Self-inverse.
pub fn swap_pairs(mut s: Vec<String>) -> Vec<String> {
    for i in (0..s.len().saturating_sub(1)).step_by(2) {
        s.swap(i, i + 1);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub l0: Vec<Vec<String>>,
    pub l1: Vec<Vec<String>>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.l0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l0.is_empty()
    }

    /// Monolingual halves for unsupervised training: language 0 from the first
    /// half of the pairs and language 1 from the second, so neither side
    /// contains a translation of the other.
    pub fn disjoint_halves(&self) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
        let mid = self.len() / 2;
        (self.l0[..mid].to_vec(), self.l1[mid..].to_vec())
    }

    pub fn split_at(&self, n: usize) -> (ParallelCorpus, ParallelCorpus) {
        let n = n.min(self.len());
        (
            ParallelCorpus {
                l0: self.l0[..n].to_vec(),
                l1: self.l1[..n].to_vec(),
            },
            ParallelCorpus {
                l0: self.l0[n..].to_vec(),
                l1: self.l1[n..].to_vec(),
            },
        )
    }
}

/// Token-level F1 between two bags of words.
pub fn token_f1<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> f64 {
    if hyp.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut pool: HashMap<&str, usize> = HashMap::new();
    for r in reference {
        *pool.entry(r.as_ref()).or_default() += 1;
    }
    let mut overlap = 0;
    for h in hyp {
        if let Some(c) = pool.get_mut(h.as_ref()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / hyp.len() as f64;
    let r = overlap as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean token F1 between each generated language-1 sentence and the oracle
/// translation of its language-0 partner.
pub fn parallelism_score(spec: &CipherSpec, pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|(s0, s1)| token_f1(s1, &spec.oracle_translate(s0)))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Parallelism of the same sentences with the language-1 side rotated by a
/// random non-zero offset, so no pair keeps its own partner.
pub fn shuffled_baseline(spec: &CipherSpec, pairs: &[(Vec<String>, Vec<String>)], seed: u64) -> f64 {
    let n = pairs.len();
    if n < 2 {
        return 0.0;
    }
    let shift = seeded(seed).random_range(1..n);
    let shuffled: Vec<(Vec<String>, Vec<String>)> = (0..n)
        .map(|i| (pairs[i].0.clone(), pairs[(i + shift) % n].1.clone()))
        .collect();
    parallelism_score(spec, &shuffled)
}
