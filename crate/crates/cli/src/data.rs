//! Prepared-data directory: tokenized splits, vocabularies, embeddings.
//!
//! ```text
//! <output_dir>/data/train.l0 train.l1   (aligned only in supervised mode)
//!                   valid.l0 valid.l1 test.l0 test.l1   (aligned)
//!                   vocab.l0 vocab.l1 [emb.l0.vec emb.l1.vec]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use bitext_core::corpus::{filter_pairs, read_lines, tokenize, write_lines, Lang, Vocabulary};
use bitext_core::nmt::TrainMode;
use bitext_core::rng::derive;
use bitext_core::synth::CipherSpec;
use bitext_core::RunConfig;

use crate::error::{io_at, CliError, Result};

pub type Sentence = Vec<String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub input_pairs: usize,
    pub kept_pairs: usize,
    pub train: [usize; 2],
    pub valid: usize,
    pub test: usize,
    pub vocab: [usize; 2],
    pub embeddings: bool,
}

/// Everything `prepare-data` wrote, read back.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dir: PathBuf,
    pub vocab: [Vocabulary; 2],
    pub train: [Vec<Sentence>; 2],
    pub valid: Vec<(Sentence, Sentence)>,
    pub test: Vec<(Sentence, Sentence)>,
}

pub fn cipher_spec(cfg: &RunConfig) -> Result<Option<CipherSpec>> {
    cfg.data
        .cipher
        .map(|p| CipherSpec::new(p).map_err(CliError::Validation))
        .transpose()
}

fn split_name(split: &str, lang: Lang) -> String {
    format!("{split}.{lang}")
}

pub fn embedding_path(dir: &Path, lang: Lang) -> PathBuf {
    dir.join(format!("emb.{lang}.vec"))
}

pub fn join(s: &[String]) -> String {
    s.join(" ")
}

fn write_sents(path: &Path, sents: &[Sentence]) -> Result<()> {
    let lines: Vec<String> = sents.iter().map(|s| join(s)).collect();
    write_lines(path, &lines).map_err(io_at(path))
}

/// Whitespace-split lines of an already tokenized file.
pub fn read_tokenized(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)
        .map_err(io_at(path))?
        .iter()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect())
}

/// Raw text through the tokenizer.
pub fn read_raw(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path).map_err(io_at(path))?.iter().map(|l| tokenize(l)).collect())
}

fn source_pairs(cfg: &RunConfig) -> Result<(Vec<(Sentence, Sentence)>, Option<[String; 2]>)> {
    if let Some(spec) = cipher_spec(cfg)? {
        let c = spec.make_corpus(cfg.data.cipher_pairs, cfg.seed);
        let (e0, e1) = spec.cipher_embeddings(cfg.nmt.embed, cfg.data.cipher_emb_noise, cfg.seed);
        return Ok((c.l0.into_iter().zip(c.l1).collect(), Some([e0, e1])));
    }
    let (p0, p1) = match (&cfg.data.l0, &cfg.data.l1) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::validation("data.l0 and data.l1 are required")),
    };
    let (s0, s1) = (read_raw(p0)?, read_raw(p1)?);
    if s0.len() != s1.len() {
        return Err(CliError::validation(format!(
            "{} and {} differ in line count ({} vs {})",
            p0.display(),
            p1.display(),
            s0.len(),
            s1.len()
        )));
    }
    let emb = match (&cfg.data.emb_l0, &cfg.data.emb_l1) {
        (Some(a), Some(b)) => Some([
            fs::read_to_string(a).map_err(io_at(a))?,
            fs::read_to_string(b).map_err(io_at(b))?,
        ]),
        _ => None,
    };
    let mut pairs: Vec<_> = s0.into_iter().zip(s1).collect();
    pairs.shuffle(&mut derive(cfg.seed, "prepare-split"));
    Ok((pairs, emb))
}

/// Tokenize, filter, split and build vocabularies under `<output_dir>/data`.
pub fn prepare_data(cfg: &RunConfig) -> Result<PrepareReport> {
    cfg.validate()?;
    let (pairs, emb) = source_pairs(cfg)?;
    let input_pairs = pairs.len();
    let pairs = filter_pairs(pairs, cfg.data.max_len, cfg.data.max_ratio);
    let kept_pairs = pairs.len();
    let held = cfg.data.valid_size + cfg.data.test_size;
    if kept_pairs <= held {
        return Err(CliError::validation(format!(
            "{kept_pairs} pairs survive filtering; need more than {held} for the held-out splits"
        )));
    }
    let valid = &pairs[..cfg.data.valid_size];
    let test = &pairs[cfg.data.valid_size..held];
    let rest = &pairs[held..];
    let train: [Vec<Sentence>; 2] = match cfg.mode {
        TrainMode::Supervised => [
            rest.iter().map(|p| p.0.clone()).collect(),
            rest.iter().map(|p| p.1.clone()).collect(),
        ],
        TrainMode::Unsupervised => {
            // no sentence appears in both languages' training data
            let half = rest.len() / 2;
            [
                rest[..half].iter().map(|p| p.0.clone()).collect(),
                rest[half..].iter().map(|p| p.1.clone()).collect(),
            ]
        }
    };
    let dir = cfg.data_dir();
    fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let mut vocab_sizes = [0; 2];
    for lang in Lang::BOTH {
        let i = lang.index();
        let side = |ps: &[(Sentence, Sentence)]| -> Vec<Sentence> {
            ps.iter().map(|p| if i == 0 { p.0.clone() } else { p.1.clone() }).collect()
        };
        write_sents(&dir.join(split_name("train", lang)), &train[i])?;
        write_sents(&dir.join(split_name("valid", lang)), &side(valid))?;
        write_sents(&dir.join(split_name("test", lang)), &side(test))?;
        let vocab = Vocabulary::build(&train[i], cfg.data.max_vocab);
        vocab_sizes[i] = vocab.len();
        let vp = dir.join(split_name("vocab", lang));
        vocab.save(&vp).map_err(io_at(&vp))?;
        let ep = embedding_path(&dir, lang);
        match &emb {
            Some(e) => fs::write(&ep, &e[i]).map_err(io_at(&ep))?,
            None if ep.exists() => fs::remove_file(&ep).map_err(io_at(&ep))?,
            None => {}
        }
    }
    let report = PrepareReport {
        input_pairs,
        kept_pairs,
        train: [train[0].len(), train[1].len()],
        valid: valid.len(),
        test: test.len(),
        vocab: vocab_sizes,
        embeddings: emb.is_some(),
    };
    let rp = dir.join("prepare.json");
    fs::write(&rp, serde_json::to_string_pretty(&report).expect("report serialises")).map_err(io_at(&rp))?;
    Ok(report)
}

fn pairs_from(dir: &Path, split: &str) -> Result<Vec<(Sentence, Sentence)>> {
    let a = read_tokenized(&dir.join(split_name(split, Lang::L0)))?;
    let b = read_tokenized(&dir.join(split_name(split, Lang::L1)))?;
    if a.len() != b.len() {
        return Err(CliError::validation(format!("{split} split is not aligned")));
    }
    Ok(a.into_iter().zip(b).collect())
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let dir = cfg.data_dir();
    let load_vocab = |lang: Lang| {
        let p = dir.join(split_name("vocab", lang));
        Vocabulary::load(&p).map_err(io_at(&p))
    };
    Ok(Prepared {
        vocab: [load_vocab(Lang::L0)?, load_vocab(Lang::L1)?],
        train: [
            read_tokenized(&dir.join(split_name("train", Lang::L0)))?,
            read_tokenized(&dir.join(split_name("train", Lang::L1)))?,
        ],
        valid: pairs_from(&dir, "valid")?,
        test: pairs_from(&dir, "test")?,
        dir,
    })
}

impl Prepared {
    pub fn encode(&self, lang: Lang, sents: &[Sentence]) -> Vec<Vec<usize>> {
        sents.iter().map(|s| self.vocab[lang.index()].encode(s)).collect()
    }

    pub fn decode(&self, lang: Lang, ids: &[usize]) -> Sentence {
        self.vocab[lang.index()].decode(ids)
    }

    pub fn encode_pairs(&self, pairs: &[(Sentence, Sentence)]) -> Vec<(Vec<usize>, Vec<usize>)> {
        pairs
            .iter()
            .map(|(a, b)| (self.vocab[0].encode(a), self.vocab[1].encode(b)))
            .filter(|(a, b)| !a.is_empty() && !b.is_empty())
            .collect()
    }

    /// Non-empty training sentences of one language as ids.
    pub fn train_ids(&self, lang: Lang) -> Vec<Vec<usize>> {
        let mut v = self.encode(lang, &self.train[lang.index()]);
        v.retain(|s| !s.is_empty());
        v
    }

    pub fn vocab_sizes(&self) -> [usize; 2] {
        [self.vocab[0].len(), self.vocab[1].len()]
    }

    pub fn embeddings(&self, lang: Lang) -> Option<PathBuf> {
        Some(embedding_path(&self.dir, lang)).filter(|p| p.exists())
    }
}
