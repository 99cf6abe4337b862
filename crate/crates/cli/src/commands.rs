use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::{Deserialize, Serialize};

use bitext_core::autodiff::check::{run_op_suite, run_second_order_suite, CheckReport};
use bitext_core::corpus::Lang;
use bitext_core::eval::{bleu_translation, format_report, fwd_rev_report, generation_row, BleuWeights};
use bitext_core::gan::{sample_bilingual, GanData, GanModel, GanTrainer};
use bitext_core::nmt::{wbw_bleu, NmtModel, NmtTrainer, TrainData, TrainMode};
use bitext_core::rng::derive;
use bitext_core::synth::{parallelism_score, shuffled_baseline};
use bitext_core::xlingual::{load_embeddings, EmbeddingTable, WbwPair};
use bitext_core::{Checkpoint, RunConfig};

use crate::data::{cipher_spec, join, load_prepared, read_tokenized, Prepared, Sentence};
use crate::error::{io_at, CliError, Result};

pub const NMT_KIND: &str = "nmt";
pub const GAN_KIND: &str = "gan";

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(anyhow!("{e}"))
}

pub fn nmt_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("nmt.ckpt")
}

pub fn gan_checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("gan.ckpt")
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_at(path))?;
    writeln!(f, "{line}").map_err(io_at(path))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v).expect("report serialises") + "\n").map_err(io_at(path))
}

fn load_table(prep: &Prepared, lang: Lang, dim: usize, seed: u64) -> Result<Option<EmbeddingTable>> {
    let Some(path) = prep.embeddings(lang) else {
        return Ok(None);
    };
    let f = fs::File::open(&path).map_err(io_at(&path))?;
    let mut rng = derive(seed, &format!("embeddings-{lang}"));
    load_embeddings(f, &prep.vocab[lang.index()], dim, &mut rng)
        .map(Some)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmtReport {
    pub config: String,
    pub epochs: usize,
    /// Test BLEU-4, l0→l1 then l1→l0.
    pub test_bleu: [f64; 2],
    /// Word-by-word dictionary BLEU-4 on the same test set, when available.
    pub wbw_bleu: Option<[f64; 2]>,
    pub shared_weights_ok: bool,
}

/// Train the translator; writes `nmt.ckpt`, `nmt_log.jsonl` and
/// `nmt_report.json` under the output directory.
pub fn train_nmt(cfg: &RunConfig) -> Result<NmtReport> {
    cfg.validate()?;
    let prep = load_prepared(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_at(&cfg.output_dir))?;
    let mut model = NmtModel::new(cfg.nmt.clone(), prep.vocab_sizes(), cfg.seed).map_err(|e| CliError::validation(e.to_string()))?;
    let tables = [
        load_table(&prep, Lang::L0, cfg.nmt.embed, cfg.seed)?,
        load_table(&prep, Lang::L1, cfg.nmt.embed, cfg.seed)?,
    ];
    let wbw = match &tables {
        [Some(a), Some(b)] => Some(WbwPair::build(a, b).map_err(runtime)?),
        _ => None,
    };
    if cfg.data.pretrained {
        for (lang, t) in Lang::BOTH.into_iter().zip(&tables) {
            if let Some(t) = t {
                model.set_embeddings(lang, t.matrix.clone()).map_err(runtime)?;
            }
        }
    }
    let data = match cfg.mode {
        TrainMode::Supervised => TrainData::Supervised {
            pairs: prep.encode_pairs(&prep.train[0].iter().cloned().zip(prep.train[1].iter().cloned()).collect::<Vec<_>>()),
        },
        TrainMode::Unsupervised => TrainData::Unsupervised {
            mono: [prep.train_ids(Lang::L0), prep.train_ids(Lang::L1)],
            wbw: wbw
                .clone()
                .ok_or_else(|| CliError::validation("unsupervised training needs embeddings for both languages"))?,
        },
    };
    let valid = prep.encode_pairs(&prep.valid);
    let log_path = cfg.output_dir.join("nmt_log.jsonl");
    fs::write(&log_path, "").map_err(io_at(&log_path))?;
    let ckpt_path = nmt_checkpoint_path(cfg);
    let mut trainer = NmtTrainer::new(model, cfg.seed);
    let mut shared_ok = true;
    let mut sink_err = None;
    trainer
        .train(&data, &valid, |t, log| {
            let ok = t.model.check_shared_weights()?;
            shared_ok &= ok;
            let ck = Checkpoint {
                kind: NMT_KIND.into(),
                config: cfg.echo(),
                epoch: t.epoch as u64,
                rng: Some(t.rng_state()),
                params: t.model.params(),
            };
            if let Err(e) = append_line(&log_path, &log.to_json()).and_then(|_| ck.save(&ckpt_path).map_err(io_at(&ckpt_path))) {
                sink_err = Some(e);
            }
            Ok(())
        })
        .map_err(runtime)?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    let test = prep.encode_pairs(&prep.test);
    let model = &trainer.model;
    let test_bleu = [model.bleu(&test, Lang::L0).map_err(runtime)?, model.bleu(&test, Lang::L1).map_err(runtime)?];
    let wbw_bleu = match &wbw {
        Some(w) => Some([wbw_bleu(w, &test, Lang::L0).map_err(runtime)?, wbw_bleu(w, &test, Lang::L1).map_err(runtime)?]),
        None => None,
    };
    let report = NmtReport {
        config: cfg.echo(),
        epochs: trainer.epoch,
        test_bleu,
        wbw_bleu,
        shared_weights_ok: shared_ok,
    };
    write_json(&cfg.output_dir.join("nmt_report.json"), &report)?;
    if !shared_ok {
        return Err(runtime("shared-weight invariant violated during training"));
    }
    Ok(report)
}

/// Rebuild a translator from its checkpoint, using the configuration echoed
/// inside it.
pub fn load_nmt(path: &Path) -> Result<NmtModel> {
    let ck = Checkpoint::load_kind(path, NMT_KIND)?;
    let cfg = RunConfig::from_echo(&ck.config)?;
    let vocab = |lang: Lang| -> Result<usize> {
        ck.params
            .get(&format!("emb.{lang}"))
            .map(|t| t.shape()[0])
            .ok_or_else(|| CliError::validation(format!("{}: no embedding table for {lang}", path.display())))
    };
    let v = [vocab(Lang::L0)?, vocab(Lang::L1)?];
    NmtModel::from_params(cfg.nmt, v, ck.params).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn load_gan(path: &Path) -> Result<GanModel> {
    let ck = Checkpoint::load_kind(path, GAN_KIND)?;
    let cfg = RunConfig::from_echo(&ck.config)?;
    let shape = |name: &str| {
        ck.params
            .get(name)
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| CliError::validation(format!("{}: missing `{name}`", path.display())))
    };
    let depth = shape("critic.conv.0.w")?[1];
    let rows = shape("gen.lin.w")?[1] / depth.max(1);
    GanModel::from_params(cfg.gan, rows, depth, ck.params).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanReport {
    pub config: String,
    pub epochs: usize,
    pub critic_updates: usize,
    pub gen_updates: usize,
    /// Per-epoch mean of `E D(c) - E D(ĉ)`.
    pub wasserstein: Vec<f64>,
}

/// Train the generator and critic over the frozen translator at `nmt`;
/// writes `gan.ckpt`, `gan_log.jsonl` and `gan_report.json`.
pub fn train_gan(cfg: &RunConfig, nmt: &Path) -> Result<GanReport> {
    cfg.validate()?;
    let prep = load_prepared(cfg)?;
    let model = load_nmt(nmt)?;
    let gan = GanModel::for_translator(cfg.gan.clone(), &model.net, cfg.seed).map_err(|e| CliError::validation(e.to_string()))?;
    let fit = |v: Vec<Vec<usize>>| -> Vec<Vec<usize>> { v.into_iter().filter(|s| s.len() <= cfg.gan.max_len).collect() };
    let data = match cfg.mode {
        TrainMode::Supervised => {
            let pairs: Vec<(Sentence, Sentence)> = prep.train[0].iter().cloned().zip(prep.train[1].iter().cloned()).collect();
            let (l0, l1) = prep
                .encode_pairs(&pairs)
                .into_iter()
                .filter(|(a, b)| a.len() <= cfg.gan.max_len && b.len() <= cfg.gan.max_len)
                .unzip();
            GanData { l0, l1, parallel: true }
        }
        TrainMode::Unsupervised => GanData {
            l0: fit(prep.train_ids(Lang::L0)),
            l1: fit(prep.train_ids(Lang::L1)),
            parallel: false,
        },
    };
    let log_path = cfg.output_dir.join("gan_log.jsonl");
    fs::write(&log_path, "").map_err(io_at(&log_path))?;
    let mut trainer = GanTrainer::new(gan, cfg.seed);
    let mut sink_err = None;
    trainer
        .train(&model.net, &data, |l| {
            if let Err(e) = append_line(&log_path, &l.to_json()) {
                sink_err.get_or_insert(e);
            }
        })
        .map_err(runtime)?;
    if let Some(e) = sink_err {
        return Err(e);
    }
    let ck = Checkpoint {
        kind: GAN_KIND.into(),
        config: cfg.echo(),
        epoch: trainer.epoch as u64,
        rng: Some(trainer.rng_state()),
        params: trainer.model.params.clone(),
    };
    let path = gan_checkpoint_path(cfg);
    ck.save(&path).map_err(io_at(&path))?;
    let report = GanReport {
        config: cfg.echo(),
        epochs: trainer.epoch,
        critic_updates: trainer.critic_updates,
        gen_updates: trainer.gen_updates,
        wasserstein: trainer.logs.iter().map(|l| l.wasserstein).collect(),
    };
    write_json(&cfg.output_dir.join("gan_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LangSel {
    L0,
    L1,
    Both,
}

impl std::str::FromStr for LangSel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "l0" => Ok(LangSel::L0),
            "l1" => Ok(LangSel::L1),
            "both" => Ok(LangSel::Both),
            _ => Err(format!("expected l0, l1 or both, got `{s}`")),
        }
    }
}

pub fn parse_direction(s: &str) -> std::result::Result<(Lang, Lang), String> {
    match s {
        "l0-l1" => Ok((Lang::L0, Lang::L1)),
        "l1-l0" => Ok((Lang::L1, Lang::L0)),
        "l0-l0" => Ok((Lang::L0, Lang::L0)),
        "l1-l1" => Ok((Lang::L1, Lang::L1)),
        _ => Err(format!("expected a direction like l0-l1, got `{s}`")),
    }
}

/// Translate a raw-text file line by line; empty lines stay empty.
pub fn translate(cfg: &RunConfig, nmt: &Path, input: &Path, output: &Path, dir: (Lang, Lang)) -> Result<usize> {
    let prep = load_prepared(cfg)?;
    let model = load_nmt(nmt)?;
    let (from, to) = dir;
    let sents = crate::data::read_raw(input)?;
    let ids = prep.encode(from, &sents);
    let todo: Vec<usize> = (0..ids.len()).filter(|&i| !ids[i].is_empty()).collect();
    let batch: Vec<Vec<usize>> = todo.iter().map(|&i| ids[i].clone()).collect();
    let out = if batch.is_empty() {
        Vec::new()
    } else {
        model.translate(&batch, from, to).map_err(runtime)?
    };
    let mut lines = vec![String::new(); sents.len()];
    for (&i, t) in todo.iter().zip(out) {
        lines[i] = join(&prep.decode(to, &t));
    }
    bitext_core::corpus::write_lines(output, &lines).map_err(io_at(output))?;
    Ok(lines.len())
}

/// Sample `n` codes and decode them; `both` writes line-aligned pair files.
/// Returns the written paths.
pub fn generate(cfg: &RunConfig, nmt: &Path, gan: &Path, n: usize, lang: LangSel, prefix: &Path) -> Result<Vec<PathBuf>> {
    let prep = load_prepared(cfg)?;
    let model = load_nmt(nmt)?;
    let g = load_gan(gan)?;
    let pairs = sample_bilingual(&g, &model.net, n, cfg.seed).map_err(runtime)?;
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_at(parent))?;
    }
    let mut written = Vec::new();
    for l in Lang::BOTH {
        let wanted = matches!((lang, l), (LangSel::Both, _) | (LangSel::L0, Lang::L0) | (LangSel::L1, Lang::L1));
        if !wanted {
            continue;
        }
        let lines: Vec<String> = pairs
            .iter()
            .map(|(a, b)| join(&prep.decode(l, if l == Lang::L0 { a } else { b })))
            .collect();
        let path = PathBuf::from(format!("{}.{l}", prefix.display()));
        bitext_core::corpus::write_lines(&path, &lines).map_err(io_at(&path))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalMode {
    /// Corpus BLEU-4 of `hyp` against the line-aligned `reference`.
    TransBleu { hyp: PathBuf, reference: PathBuf },
    /// Generation BLEU-2..5 of every `hyp` line against the whole reference set.
    GenBleu { hyp: PathBuf, reference: PathBuf, lang: Lang },
    /// F-PPL, R-PPL and real-test PPL for samples of one language.
    Ppl { hyp: PathBuf, lang: Lang },
    /// Cipher-oracle parallelism of aligned sample files, with the
    /// shuffled-pair baseline.
    Parallelism { l0: PathBuf, l1: PathBuf },
}

/// Compute one metric report as text.
pub fn evaluate(cfg: &RunConfig, mode: &EvalMode) -> Result<String> {
    let mut out = String::new();
    match mode {
        EvalMode::TransBleu { hyp, reference } => {
            let (h, r) = (read_tokenized(hyp)?, read_tokenized(reference)?);
            let b = bleu_translation(&h, &r).map_err(|e| CliError::validation(e.to_string()))?;
            let _ = writeln!(out, "BLEU-4 {b:.4}");
        }
        EvalMode::GenBleu { hyp, reference, lang } => {
            let (h, r) = (read_tokenized(hyp)?, read_tokenized(reference)?);
            let row = generation_row(&lang.to_string(), &h, &r, BleuWeights::Uniform, None)
                .map_err(|e| CliError::validation(e.to_string()))?;
            out.push_str(&format_report(&[row]));
        }
        EvalMode::Ppl { hyp, lang } => {
            let prep = load_prepared(cfg)?;
            let h = read_tokenized(hyp)?;
            let i = lang.index();
            let test: Vec<Sentence> = prep.test.iter().map(|p| if i == 0 { p.0.clone() } else { p.1.clone() }).collect();
            let r = fwd_rev_report(&prep.train[i], &test, &h, &cfg.lm).map_err(|e| CliError::validation(e.to_string()))?;
            let _ = writeln!(out, "{lang} F-PPL {:.4} R-PPL {:.4} T-PPL {:.4}", r.forward, r.reverse, r.real);
        }
        EvalMode::Parallelism { l0, l1 } => {
            let spec = cipher_spec(cfg)?.ok_or_else(|| CliError::validation("parallelism needs data.cipher"))?;
            let (a, b) = (read_tokenized(l0)?, read_tokenized(l1)?);
            if a.len() != b.len() {
                return Err(CliError::validation("sample files are not line-aligned"));
            }
            let pairs: Vec<(Sentence, Sentence)> = a.into_iter().zip(b).collect();
            let _ = writeln!(
                out,
                "parallelism {:.4} shuffled {:.4}",
                parallelism_score(&spec, &pairs),
                shuffled_baseline(&spec, &pairs, cfg.seed)
            );
        }
    }
    Ok(out)
}

/// Finite-difference suites over `seeds` as a table, and whether all passed.
pub fn grad_check(seeds: u64) -> (String, bool) {
    let mut reports: Vec<CheckReport> = run_op_suite(0..seeds);
    reports.extend(run_second_order_suite(0..seeds));
    let mut out = String::new();
    let _ = writeln!(out, "{:<28} {:>12} {:>10}  result", "check", "max rel err", "tol");
    for r in &reports {
        let _ = writeln!(
            out,
            "{:<28} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.max_rel_err,
            r.tol,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    (out, reports.iter().all(CheckReport::passed))
}
