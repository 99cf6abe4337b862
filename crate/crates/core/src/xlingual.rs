//! Pretrained embedding ingestion and the unsupervised word-by-word dictionary.

use std::io::{BufRead, BufReader, Read};

use log::warn;
use rand::Rng;
use thiserror::Error;

use crate::corpus::{Lang, TokenSeq, Vocabulary, RESERVED, UNK};
use crate::nn::INIT_RANGE;
use crate::tensor::Tensor;

pub const EMBED_DIM: usize = 300;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("embedding dimension {found} does not match expected {expected}")]
    Dimension { found: usize, expected: usize },
    #[error("embedding tables have different dimensions ({0} vs {1})")]
    Mismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `|V| x dim` embedding matrix for one vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
    /// Fraction of content words found in the source file.
    pub coverage: f64,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// Parse word2vec text format (`count dim` header, then `word v1 .. vdim`).
/// Vocabulary words missing from the file, and the reserved rows, get the
/// same uniform initialisation as other parameters.
pub fn load_embeddings<R: Read, G: Rng + ?Sized>(
    reader: R,
    vocab: &Vocabulary,
    expected_dim: usize,
    rng: &mut G,
) -> Result<EmbeddingTable, EmbeddingError> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines.next().transpose()?.ok_or(EmbeddingError::Malformed {
        line: 1,
        msg: "missing header".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str| {
        s.parse::<usize>().map_err(|_| EmbeddingError::Malformed {
            line: 1,
            msg: format!("bad header field {s:?}"),
        })
    };
    if fields.len() != 2 {
        return Err(EmbeddingError::Malformed {
            line: 1,
            msg: "header must be `count dim`".into(),
        });
    }
    let dim = parse_usize(fields[1])?;
    if dim != expected_dim {
        return Err(EmbeddingError::Dimension {
            found: dim,
            expected: expected_dim,
        });
    }
    let mut data = Tensor::uniform(&[vocab.len(), dim], -INIT_RANGE, INIT_RANGE, rng).to_vec();
    let mut found = vec![false; vocab.len()];
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().unwrap();
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| EmbeddingError::Malformed {
                    line: lineno,
                    msg: format!("bad float {p:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(EmbeddingError::Malformed {
                line: lineno,
                msg: format!("expected {dim} values, found {}", values.len()),
            });
        }
        if !vocab.contains(word) {
            continue;
        }
        let id = vocab.id(word);
        if id < RESERVED {
            continue;
        }
        data[id * dim..(id + 1) * dim].copy_from_slice(&values);
        found[id] = true;
    }
    let content = vocab.content_len();
    let coverage = if content == 0 {
        0.0
    } else {
        found.iter().filter(|&&f| f).count() as f64 / content as f64
    };
    Ok(EmbeddingTable {
        matrix: Tensor::new(vec![vocab.len(), dim], data).expect("sized above"),
        trainable: true,
        coverage,
    })
}

/// Source id to target id dictionary; reserved ids map to themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WbwTable {
    pub map: Vec<usize>,
}

impl WbwTable {
    pub fn get(&self, id: usize) -> usize {
        self.map.get(id).copied().unwrap_or(UNK)
    }
}

/// Nearest target word by cosine similarity for every source content word;
/// ties go to the lower target id. Zero-norm rows map to UNK.
pub fn build_wbw_table(src: &EmbeddingTable, tgt: &EmbeddingTable) -> Result<WbwTable, EmbeddingError> {
    if src.dim() != tgt.dim() {
        return Err(EmbeddingError::Mismatch(src.dim(), tgt.dim()));
    }
    let d = src.dim();
    let unit = |t: &Tensor, i: usize| -> Option<Vec<f64>> {
        let r = &t.data()[i * d..(i + 1) * d];
        let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        (n > 0.0).then(|| r.iter().map(|x| x / n).collect())
    };
    let targets: Vec<Option<Vec<f64>>> = (0..tgt.rows()).map(|j| if j < RESERVED { None } else { unit(&tgt.matrix, j) }).collect();
    let mut map: Vec<usize> = (0..RESERVED.min(src.rows())).collect();
    for i in RESERVED..src.rows() {
        let Some(u) = unit(&src.matrix, i) else {
            warn!("source embedding row {i} has zero norm, mapping to UNK");
            map.push(UNK);
            continue;
        };
        let mut best = (f64::NEG_INFINITY, UNK);
        for (j, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let c: f64 = u.iter().zip(t).map(|(a, b)| a * b).sum();
                if c > best.0 {
                    best = (c, j);
                }
            }
        }
        map.push(best.1);
    }
    Ok(WbwTable { map })
}

/// Token-by-token dictionary translation into the other language.
pub fn translate_wbw(seq: &TokenSeq, table: &WbwTable) -> TokenSeq {
    TokenSeq::new(seq.ids.iter().map(|&i| table.get(i)).collect(), seq.lang.other())
}

/// Dictionaries for both directions of a language pair.
#[derive(Debug, Clone)]
pub struct WbwPair {
    pub l0_to_l1: WbwTable,
    pub l1_to_l0: WbwTable,
}

impl WbwPair {
    pub fn build(e0: &EmbeddingTable, e1: &EmbeddingTable) -> Result<Self, EmbeddingError> {
        Ok(WbwPair {
            l0_to_l1: build_wbw_table(e0, e1)?,
            l1_to_l0: build_wbw_table(e1, e0)?,
        })
    }

    pub fn translate(&self, seq: &TokenSeq) -> TokenSeq {
        match seq.lang {
            Lang::L0 => translate_wbw(seq, &self.l0_to_l1),
            Lang::L1 => translate_wbw(seq, &self.l1_to_l0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;
    use crate::rng::seeded;
    use crate::synth::{CipherParams, CipherSpec};

    fn table(rows: &[&[f64]]) -> EmbeddingTable {
        let d = rows[0].len();
        let mut data = vec![0.0; RESERVED * d];
        for r in rows {
            data.extend_from_slice(r);
        }
        EmbeddingTable {
            matrix: Tensor::new(vec![RESERVED + rows.len(), d], data).unwrap(),
            trainable: false,
            coverage: 1.0,
        }
    }

    fn w2v(words: &[(&str, Vec<f64>)], dim: usize) -> String {
        let mut s = format!("{} {dim}\n", words.len());
        for (w, v) in words {
            s.push_str(w);
            for x in v {
                s.push_str(&format!(" {x}"));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn full_coverage_and_exact_values() {
        let vocab = Vocabulary::from_words(&["chat", "chien"]);
        let a: Vec<f64> = (0..300).map(|i| i as f64 * 0.001 - 0.1234567890123).collect();
        let b: Vec<f64> = (0..300).map(|i| -(i as f64) * 1e-7 + 3.5e-3).collect();
        let text = w2v(&[("chat", a.clone()), ("chien", b.clone())], 300);
        let t = load_embeddings(text.as_bytes(), &vocab, 300, &mut seeded(0)).unwrap();
        assert_eq!(t.coverage, 1.0);
        assert_eq!(t.matrix.row(vocab.id("chat")), &a[..]);
        assert_eq!(t.matrix.row(vocab.id("chien")), &b[..]);
    }

    #[test]
    fn empty_body_gives_zero_coverage() {
        let vocab = Vocabulary::from_words(&["x", "y"]);
        let t = load_embeddings("0 300\n".as_bytes(), &vocab, 300, &mut seeded(0)).unwrap();
        assert_eq!(t.coverage, 0.0);
        assert!(t.matrix.data().iter().all(|v| v.abs() <= INIT_RANGE));
        assert!(t.matrix.max_abs() > 0.0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let vocab = Vocabulary::from_words(&["x"]);
        let err = load_embeddings("1 3\nx 1.0 oops 2.0\n".as_bytes(), &vocab, 3, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, EmbeddingError::Malformed { line: 2, .. }), "{err}");
        let err = load_embeddings("1 3\nx 1.0 2.0\n".as_bytes(), &vocab, 3, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, EmbeddingError::Malformed { line: 2, .. }));
    }

    #[test]
    fn wrong_dimension_rejected() {
        let vocab = Vocabulary::from_words(&["x"]);
        let err = load_embeddings("1 50\n".as_bytes(), &vocab, EMBED_DIM, &mut seeded(0)).unwrap_err();
        assert!(matches!(err, EmbeddingError::Dimension { found: 50, expected: 300 }));
    }

    #[test]
    fn identical_row_wins() {
        let src = table(&[&[0.3, -0.2, 0.9]]);
        let tgt = table(&[&[1.0, 0.0, 0.0], &[0.3, -0.2, 0.9], &[0.0, 1.0, 0.0]]);
        assert_eq!(build_wbw_table(&src, &tgt).unwrap().get(RESERVED), RESERVED + 1);
    }

    #[test]
    fn orthogonal_basis_maps_to_itself() {
        let e = table(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = build_wbw_table(&e, &e).unwrap();
        assert_eq!(t.map, (0..RESERVED + 2).collect::<Vec<_>>());
    }

    #[test]
    fn ties_prefer_lower_id_and_zero_rows_map_to_unk() {
        let src = table(&[&[1.0, 0.0], &[0.0, 0.0]]);
        let tgt = table(&[&[0.0, 1.0], &[2.0, 0.0], &[1.0, 0.0]]);
        let t = build_wbw_table(&src, &tgt).unwrap();
        assert_eq!(t.get(RESERVED), RESERVED + 1);
        assert_eq!(t.get(RESERVED + 1), UNK);
    }

    #[test]
    fn scale_invariance() {
        let src = table(&[&[0.2, 0.7, -0.1], &[0.9, -0.3, 0.4]]);
        let tgt = table(&[&[0.1, 0.8, 0.0], &[1.0, -0.2, 0.5], &[-0.5, 0.1, 0.3]]);
        let scaled = |t: &EmbeddingTable| EmbeddingTable {
            matrix: t.matrix.map(|x| x * 17.5),
            ..t.clone()
        };
        assert_eq!(
            build_wbw_table(&src, &tgt).unwrap(),
            build_wbw_table(&scaled(&src), &scaled(&tgt)).unwrap()
        );
    }

    #[test]
    fn cipher_permutation_recovered() {
        let spec = CipherSpec::new(CipherParams::default()).unwrap();
        let (e0, e1) = spec.cipher_embeddings(EMBED_DIM, 0.05, 11);
        let v0 = Vocabulary::from_words(spec.lexicon(0));
        let v1 = Vocabulary::from_words(spec.lexicon(1));
        let t0 = load_embeddings(e0.as_bytes(), &v0, EMBED_DIM, &mut seeded(1)).unwrap();
        let t1 = load_embeddings(e1.as_bytes(), &v1, EMBED_DIM, &mut seeded(2)).unwrap();
        let pair = WbwPair::build(&t0, &t1).unwrap();
        for w in spec.lexicon(0) {
            let got = pair.l0_to_l1.get(v0.id(w));
            assert_eq!(v1.token(got).unwrap(), spec.map_word(w));
        }
        let corpus = spec.make_corpus(20, 3);
        for s in &corpus.l0 {
            let seq = TokenSeq::new(v0.encode(s), Lang::L0);
            let out = pair.translate(&seq);
            assert_eq!(out.lang, Lang::L1);
            assert_eq!(v1.decode(&out.ids), spec.word_by_word(s));
        }
    }

    #[test]
    fn translate_wbw_edge_cases() {
        let t = WbwTable {
            map: (0..RESERVED).chain([RESERVED + 1, RESERVED]).collect(),
        };
        let empty = TokenSeq::new(vec![], Lang::L0);
        assert!(translate_wbw(&empty, &t).is_empty());
        let unk = TokenSeq::new(vec![UNK, UNK], Lang::L1);
        assert_eq!(translate_wbw(&unk, &t).ids, vec![UNK, UNK]);
        let s = TokenSeq::new(vec![RESERVED, RESERVED + 1, EOS], Lang::L0);
        let out = translate_wbw(&s, &t);
        assert_eq!(out.ids, vec![RESERVED + 1, RESERVED, EOS]);
        assert_eq!(out.lang, Lang::L1);
    }
}
