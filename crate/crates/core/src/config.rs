//! Run configuration: one TOML file with every stage's settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::LmConfig;
use crate::gan::GanConfig;
use crate::nmt::{NmtConfig, TrainMode};
use crate::synth::CipherParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key.path=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where training text comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Raw text, one sentence per line; the two files are line-aligned.
    pub l0: Option<PathBuf>,
    pub l1: Option<PathBuf>,
    /// word2vec text embeddings (ideally cross-lingual) for each language.
    pub emb_l0: Option<PathBuf>,
    pub emb_l1: Option<PathBuf>,
    /// Generate a synthetic cipher pair instead of reading `l0`/`l1`.
    pub cipher: Option<CipherParams>,
    /// Sentence pairs drawn from the cipher.
    pub cipher_pairs: usize,
    /// Noise on the synthetic cipher embeddings.
    pub cipher_emb_noise: f64,
    pub max_vocab: usize,
    pub max_len: usize,
    pub max_ratio: f64,
    pub valid_size: usize,
    pub test_size: usize,
    /// Load the embedding files into the translator before training.
    pub pretrained: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            l0: None,
            l1: None,
            emb_l0: None,
            emb_l1: None,
            cipher: None,
            cipher_pairs: 4000,
            cipher_emb_noise: 0.1,
            max_vocab: 15000,
            max_len: 20,
            max_ratio: 1.5,
            valid_size: 200,
            test_size: 200,
            pretrained: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub nmt: NmtConfig,
    pub gan: GanConfig,
    pub lm: LmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: TrainMode::Unsupervised,
            seed: 0,
            output_dir: PathBuf::from("run"),
            data: DataConfig::default(),
            nmt: NmtConfig::default(),
            gan: GanConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

impl RunConfig {
    /// Parse TOML text, apply `key.path=value` overrides, normalise and
    /// validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let parts: Vec<&str> = key.trim().split('.').collect();
            if parts.iter().any(|p| p.is_empty()) {
                return Err(ConfigError::Override(o.clone()));
            }
            let mut cur = &mut table;
            for p in &parts[..parts.len() - 1] {
                let entry = cur
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(o.clone()))?;
            }
            cur.insert(parts[parts.len() - 1].to_owned(), parse_value(raw.trim()));
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.nmt.mode = cfg.mode;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        RunConfig::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Canonical single-line form stored in checkpoints and reports.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn from_echo(s: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.nmt.mode != self.mode {
            return bad("nmt.mode differs from mode".into());
        }
        self.nmt.validate().map_err(ConfigError::Invalid)?;
        self.gan.validate().map_err(ConfigError::Invalid)?;
        let d = &self.data;
        if d.max_len == 0 || d.max_vocab == 0 {
            return bad("data.max_len and data.max_vocab must be positive".into());
        }
        if !(d.max_ratio >= 1.0) {
            return bad(format!("data.max_ratio must be at least 1, got {}", d.max_ratio));
        }
        if self.gan.max_len < d.max_len {
            return bad(format!(
                "gan.max_len {} is shorter than data.max_len {}",
                self.gan.max_len, d.max_len
            ));
        }
        if self.lm.epochs == 0 || self.lm.batch_size == 0 {
            return bad("lm.epochs and lm.batch_size must be positive".into());
        }
        match (&d.cipher, &d.l0, &d.l1) {
            (Some(_), None, None) => {
                if d.cipher_pairs <= d.valid_size + d.test_size {
                    return bad("data.cipher_pairs leaves no training pairs".into());
                }
            }
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => return bad("set either data.cipher or data.l0/l1, not both".into()),
            _ => return bad("data.l0 and data.l1 (or data.cipher) are required".into()),
        }
        if d.emb_l0.is_some() != d.emb_l1.is_some() {
            return bad("data.emb_l0 and data.emb_l1 go together".into());
        }
        if self.mode == TrainMode::Unsupervised && d.cipher.is_none() && d.emb_l0.is_none() {
            return bad("unsupervised mode needs embeddings for the word-by-word bootstrap".into());
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }
}
