//! Shared-latent bilingual translator: denoising reconstruction,
//! cross-domain (back-translation) loss, optional latent adversary, and the
//! schedule that swaps word-by-word for model translation.

mod disc;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use disc::{adversarial_loss, mean_pool, LatentDiscriminator};
pub use train::{EpochLog, NmtTrainer, TrainData};

use crate::corpus::{Lang, NoiseConfig};
use crate::eval::{bleu_translation, EvalError};
use crate::nn::{ConcatMode, ModelDims, ParamError, ParamStore, Seq2Seq};
use crate::tensor::TensorError;
use crate::xlingual::{WbwPair, EMBED_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    #[default]
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmtConfig {
    pub mode: TrainMode,
    pub layers: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attn: usize,
    pub concat: ConcatMode,
    pub use_adv: bool,
    /// First epoch (1-based) that back-translates with the model itself.
    pub mtf_epoch: usize,
    pub noise: NoiseConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub disc_lr: f64,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    pub train_embeddings: bool,
    /// Validation pairs used for the per-epoch invariance metric.
    pub invariance_pairs: usize,
}

impl Default for NmtConfig {
    fn default() -> Self {
        NmtConfig {
            mode: TrainMode::Unsupervised,
            layers: 1,
            embed: EMBED_DIM,
            hidden: 256,
            attn: 256,
            concat: ConcatMode::Depthwise,
            use_adv: false,
            mtf_epoch: 5,
            noise: NoiseConfig::default(),
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.999,
            disc_lr: 5e-4,
            disc_hidden: 1024,
            disc_layers: 3,
            max_len: 20,
            batch_size: 32,
            epochs: 10,
            clip_norm: 5.0,
            train_embeddings: true,
            invariance_pairs: 200,
        }
    }
}

impl NmtConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=2).contains(&self.layers) {
            return Err(format!("layers must be 1 or 2, got {}", self.layers));
        }
        if self.mode == TrainMode::Unsupervised && self.mtf_epoch < 1 {
            return Err("mtf_epoch must be at least 1 in unsupervised mode".into());
        }
        if self.embed == 0 || self.hidden == 0 || self.attn == 0 || self.disc_hidden == 0 {
            return Err("layer sizes must be positive".into());
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err("batch_size and max_len must be positive".into());
        }
        for (name, lr) in [("lr", self.lr), ("disc_lr", self.disc_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("Adam betas must lie in [0, 1)".into());
        }
        self.noise.validate()
    }

    pub fn dims(&self, vocab: [usize; 2]) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            attn: self.attn,
            layers: self.layers,
            concat: self.concat,
        }
    }

    /// Translation policy for a 1-based epoch.
    pub fn translator_kind(&self, epoch: usize) -> TranslatorKind {
        match self.mode {
            TrainMode::Supervised => TranslatorKind::GroundTruth,
            TrainMode::Unsupervised if epoch < self.mtf_epoch => TranslatorKind::WordByWord,
            TrainMode::Unsupervised => TranslatorKind::ModelBackTranslation,
        }
    }
}

/// How `T(s)` is produced for the cross-domain loss.
#[derive(Debug, Clone)]
pub enum TranslatorFn {
    WordByWord(WbwPair),
    ModelBackTranslation,
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslatorKind {
    WordByWord,
    ModelBackTranslation,
    GroundTruth,
}

impl TranslatorFn {
    pub fn kind(&self) -> TranslatorKind {
        match self {
            TranslatorFn::WordByWord(_) => TranslatorKind::WordByWord,
            TranslatorFn::ModelBackTranslation => TranslatorKind::ModelBackTranslation,
            TranslatorFn::GroundTruth => TranslatorKind::GroundTruth,
        }
    }
}

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training diverged at epoch {epoch}, step {step}: {what} = {value}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: &'static str,
        value: f64,
    },
    #[error("ground-truth translation requested without an aligned pair")]
    MissingPair,
    #[error("cannot translate an empty sentence")]
    EmptyInput,
}

/// Translator network plus the optional latent discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtModel {
    pub config: NmtConfig,
    pub net: Seq2Seq,
    pub disc: Option<LatentDiscriminator>,
}

impl NmtModel {
    pub fn new(config: NmtConfig, vocab: [usize; 2], seed: u64) -> Result<Self, NmtError> {
        config.validate().map_err(NmtError::Config)?;
        let dims = config.dims(vocab);
        dims.validate().map_err(NmtError::Config)?;
        let mut rng = crate::rng::derive(seed, "nmt-init");
        let net = Seq2Seq::new(dims.clone(), &mut rng);
        let disc = config
            .use_adv
            .then(|| LatentDiscriminator::new(dims.depth(), config.disc_hidden, config.disc_layers, &mut rng));
        Ok(NmtModel { config, net, disc })
    }

    pub fn vocab(&self) -> [usize; 2] {
        self.net.dims.vocab
    }

    /// Replace an embedding table, e.g. with pretrained vectors.
    pub fn set_embeddings(&mut self, lang: Lang, table: crate::tensor::Tensor) -> Result<(), NmtError> {
        let name = format!("emb.{lang}");
        let expected = self.net.params.get(&name).map(|t| t.shape().to_vec()).unwrap_or_default();
        if table.shape() != expected.as_slice() {
            return Err(NmtError::Params(ParamError::Shape {
                name,
                found: table.shape().to_vec(),
                expected,
            }));
        }
        self.net.params.insert(name, table);
        Ok(())
    }

    /// All tensors, discriminator entries under `disc.`.
    pub fn params(&self) -> ParamStore {
        let mut p = self.net.params.clone();
        if let Some(d) = &self.disc {
            p.extend(d.params.clone());
        }
        p
    }

    pub fn from_params(config: NmtConfig, vocab: [usize; 2], params: ParamStore) -> Result<Self, NmtError> {
        let template = NmtModel::new(config.clone(), vocab, 0)?;
        params.check_against(&template.params())?;
        let disc = template.disc.map(|d| LatentDiscriminator {
            params: params.subset(LatentDiscriminator::PREFIX),
            layers: d.layers,
        });
        let mut net_params = ParamStore::new();
        for (k, v) in params.iter().filter(|(k, _)| !k.starts_with(LatentDiscriminator::PREFIX)) {
            net_params.insert(k.clone(), v.clone());
        }
        Ok(NmtModel {
            net: Seq2Seq::from_params(config.dims(vocab), net_params)?,
            config,
            disc,
        })
    }

    /// Greedy translation without noise, at most `max_len` output tokens.
    pub fn translate(&self, seqs: &[Vec<usize>], from: Lang, to: Lang) -> Result<Vec<Vec<usize>>, NmtError> {
        if seqs.iter().any(Vec::is_empty) {
            return Err(NmtError::EmptyInput);
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            out.extend(self.net.translate(chunk, from, to, self.config.max_len)?);
        }
        Ok(out)
    }

    /// Corpus BLEU-4 of translating the `from` side of `pairs` into `to`.
    pub fn bleu(&self, pairs: &[(Vec<usize>, Vec<usize>)], from: Lang) -> Result<f64, NmtError> {
        let (src, refs) = split_pairs(pairs, from);
        let hyp = self.translate(&src, from, from.other())?;
        Ok(bleu_translation(&hyp, &refs)?)
    }

    /// Encoder invariance: mean cosine distance between mean-pooled codes of
    /// aligned sentences, divided by the same distance for misaligned pairs
    /// (`l0[i]` against `l1[i+1]`). 1 means no cross-lingual alignment, 0
    /// means translations share their code.
    pub fn invariance(&self, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64, NmtError> {
        if pairs.len() < 2 {
            return Ok(1.0);
        }
        let (a, b) = split_pairs(pairs, Lang::L0);
        let pa: Vec<Vec<f64>> = self.net.encode(&a, Lang::L0)?.iter().map(pool_rows).collect();
        let pb: Vec<Vec<f64>> = self.net.encode(&b, Lang::L1)?.iter().map(pool_rows).collect();
        let n = pairs.len();
        let aligned: f64 = (0..n).map(|i| cosine_distance(&pa[i], &pb[i])).sum::<f64>() / n as f64;
        let shifted: f64 = (0..n).map(|i| cosine_distance(&pa[i], &pb[(i + 1) % n])).sum::<f64>() / n as f64;
        Ok(if shifted > 0.0 { aligned / shifted } else { 1.0 })
    }
}

fn pool_rows(c: &crate::nn::CodeMatrix) -> Vec<f64> {
    let mut m = vec![0.0; c.depth()];
    for t in 0..c.len() {
        for (acc, v) in m.iter_mut().zip(c.row(t)) {
            *acc += v / c.len() as f64;
        }
    }
    m
}

fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx > 0.0 && ny > 0.0 {
        1.0 - dot / (nx * ny)
    } else {
        1.0
    }
}

/// Source side in `from` and reference side in the other language.
pub fn split_pairs(pairs: &[(Vec<usize>, Vec<usize>)], from: Lang) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    pairs
        .iter()
        .map(|(a, b)| match from {
            Lang::L0 => (a.clone(), b.clone()),
            Lang::L1 => (b.clone(), a.clone()),
        })
        .unzip()
}

/// BLEU-4 of plain word-by-word translation, the unsupervised baseline.
pub fn wbw_bleu(wbw: &WbwPair, pairs: &[(Vec<usize>, Vec<usize>)], from: Lang) -> Result<f64, NmtError> {
    let (src, refs) = split_pairs(pairs, from);
    let hyp: Vec<Vec<usize>> = src
        .into_iter()
        .map(|s| wbw.translate(&crate::corpus::TokenSeq::new(s, from)).ids)
        .collect();
    Ok(bleu_translation(&hyp, &refs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mtf_schedule() {
        let cfg = NmtConfig::default();
        let kinds: Vec<_> = (1..=6).map(|e| cfg.translator_kind(e)).collect();
        assert!(kinds[..4].iter().all(|&k| k == TranslatorKind::WordByWord));
        assert!(kinds[4..].iter().all(|&k| k == TranslatorKind::ModelBackTranslation));
        let sup = NmtConfig {
            mode: TrainMode::Supervised,
            ..NmtConfig::default()
        };
        assert!((1..=10).all(|e| sup.translator_kind(e) == TranslatorKind::GroundTruth));
    }

    #[test]
    fn config_validation() {
        assert!(NmtConfig::default().validate().is_ok());
        let bad = NmtConfig {
            mtf_epoch: 0,
            ..NmtConfig::default()
        };
        assert!(bad.validate().is_err());
        let sup = NmtConfig {
            mtf_epoch: 0,
            mode: TrainMode::Supervised,
            ..NmtConfig::default()
        };
        assert!(sup.validate().is_ok());
        let layers = NmtConfig {
            layers: 3,
            ..NmtConfig::default()
        };
        assert!(layers.validate().is_err());
    }

    #[test]
    fn no_adv_has_no_disc_params() {
        let cfg = NmtConfig {
            embed: 8,
            hidden: 8,
            attn: 8,
            disc_hidden: 8,
            ..NmtConfig::default()
        };
        let m = NmtModel::new(cfg.clone(), [20, 20], 1).unwrap();
        assert!(m.params().names().all(|n| !n.starts_with("disc.")));
        let adv = NmtModel::new(NmtConfig { use_adv: true, ..cfg.clone() }, [20, 20], 1).unwrap();
        assert!(adv.params().names().any(|n| n.starts_with("disc.")));
        let back = NmtModel::from_params(adv.config.clone(), [20, 20], adv.params()).unwrap();
        assert_eq!(back, adv);
        assert!(NmtModel::from_params(cfg, [20, 20], adv.params()).is_err());
    }
}
