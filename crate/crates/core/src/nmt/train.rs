use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adversarial_loss, mean_pool, NmtError, NmtModel, TrainMode, TranslatorFn, TranslatorKind};
use crate::autodiff::Graph;
use crate::corpus::{apply_noise, Lang, TokenSeq, RESERVED, UNK};
use crate::nn::{clip_grad_norm, Adam, RmsProp, Seq2Seq};
use crate::rng::{derive, Rng, RngState};
use crate::xlingual::WbwPair;

/// Training corpora as vocabulary ids (no EOS).
#[derive(Debug, Clone)]
pub enum TrainData {
    /// Aligned `(l0, l1)` pairs.
    Supervised { pairs: Vec<(Vec<usize>, Vec<usize>)> },
    /// Monolingual corpora and the bootstrap dictionary.
    Unsupervised { mono: [Vec<Vec<usize>>; 2], wbw: WbwPair },
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub translator: TranslatorKind,
    pub steps: usize,
    pub recon: f64,
    pub cross: f64,
    pub adv_disc: Option<f64>,
    pub adv_enc: Option<f64>,
    pub bleu_l0_l1: Option<f64>,
    pub bleu_l1_l0: Option<f64>,
    pub invariance: Option<f64>,
}

impl EpochLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("epoch log serialises")
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct StepLosses {
    recon: f64,
    cross: f64,
    adv: Option<(f64, f64)>,
}

/// Owns a model and its optimizers across epochs.
#[derive(Debug)]
pub struct NmtTrainer {
    pub model: NmtModel,
    opt: Adam,
    disc_opt: RmsProp,
    rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub logs: Vec<EpochLog>,
}

impl NmtTrainer {
    pub fn new(model: NmtModel, seed: u64) -> Self {
        let c = &model.config;
        NmtTrainer {
            opt: Adam::new(c.lr, c.beta1, c.beta2),
            disc_opt: RmsProp::new(c.disc_lr),
            rng: derive(seed, "nmt-train"),
            model,
            epoch: 0,
            logs: Vec::new(),
        }
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn translator(&self, kind: TranslatorKind, data: &TrainData) -> Result<TranslatorFn, NmtError> {
        match (kind, data) {
            (TranslatorKind::WordByWord, TrainData::Unsupervised { wbw, .. }) => Ok(TranslatorFn::WordByWord(wbw.clone())),
            (TranslatorKind::ModelBackTranslation, TrainData::Unsupervised { .. }) => Ok(TranslatorFn::ModelBackTranslation),
            (TranslatorKind::GroundTruth, TrainData::Supervised { .. }) => Ok(TranslatorFn::GroundTruth),
            _ => Err(NmtError::Config(format!("{kind:?} translation does not fit the supplied corpus"))),
        }
    }

    fn translate_batch(
        &self,
        src: &[Vec<usize>],
        lang: Lang,
        tf: &TranslatorFn,
        gold: Option<&[Vec<usize>]>,
    ) -> Result<Vec<Vec<usize>>, NmtError> {
        match tf {
            TranslatorFn::WordByWord(w) => Ok(src.iter().map(|s| w.translate(&TokenSeq::new(s.clone(), lang)).ids).collect()),
            TranslatorFn::ModelBackTranslation => {
                let out = self.model.translate(src, lang, lang.other())?;
                Ok(out.into_iter().map(|t| if t.is_empty() { vec![UNK] } else { t }).collect())
            }
            TranslatorFn::GroundTruth => Ok(gold.ok_or(NmtError::MissingPair)?.to_vec()),
        }
    }

    fn noisy(&mut self, seqs: &[Vec<usize>], lang: Lang) -> Vec<Vec<usize>> {
        let cfg = self.model.config.noise;
        seqs.iter()
            .map(|s| apply_noise(&TokenSeq::new(s.clone(), lang), &cfg, &mut self.rng).ids)
            .collect()
    }

    /// One update on sentences `src` of language `lang`: reconstruction plus
    /// cross-domain loss (plus the adversarial terms when enabled).
    fn step(
        &mut self,
        src: &[Vec<usize>],
        lang: Lang,
        gold: Option<&[Vec<usize>]>,
        tf: &TranslatorFn,
        epoch: usize,
        step: usize,
    ) -> Result<StepLosses, NmtError> {
        let translated = self.translate_batch(src, lang, tf, gold)?;
        let noisy_src = self.noisy(src, lang);
        let noisy_tr = self.noisy(&translated, lang.other());
        let sigma = self.model.config.noise.sigma;
        let train_emb = self.model.config.train_embeddings;
        let net = &self.model.net;

        let mut g = Graph::new();
        let b = net.bind(&mut g, |n| train_emb || !Seq2Seq::is_embedding(n));
        let enc_r = net.encode_batch(&mut g, &b, &noisy_src, lang)?;
        let code_r = g.gaussian_noise_add(enc_r.code, sigma, &mut self.rng)?;
        let dec_r = net.prepare_code(&mut g, &b, code_r, enc_r.mask.clone())?;
        let l_r = net.teacher_forced_loss(&mut g, &b, &dec_r, src, lang)?;

        let enc_c = net.encode_batch(&mut g, &b, &noisy_tr, lang.other())?;
        let code_c = g.gaussian_noise_add(enc_c.code, sigma, &mut self.rng)?;
        let dec_c = net.prepare_code(&mut g, &b, code_c, enc_c.mask.clone())?;
        let l_c = net.teacher_forced_loss(&mut g, &b, &dec_c, src, lang)?;
        let mut total = g.add(l_r, l_c)?;

        let disc = self.model.disc.clone();
        let mut adv = None;
        if let Some(d) = &disc {
            let pr = mean_pool(&mut g, enc_r.code, &enc_r.mask)?;
            let pc = mean_pool(&mut g, enc_c.code, &enc_c.mask)?;
            let x = g.concat(&[pr, pc], 0)?;
            let labels: Vec<f64> = std::iter::repeat_n(lang.index() as f64, src.len())
                .chain(std::iter::repeat_n(lang.other().index() as f64, translated.len()))
                .collect();
            let train = d.params.bind(&mut g, |_| true);
            let fixed = d.params.bind(&mut g, |_| false);
            let (dl, el) = adversarial_loss(&mut g, d, &train, &fixed, x, &labels)?;
            total = g.add(total, el)?;
            adv = Some((dl, el, train));
        }

        let value = g.value(total).item();
        if !value.is_finite() {
            return Err(NmtError::Diverged {
                epoch,
                step,
                what: "translator loss",
                value,
            });
        }
        let grads = g.backward(total)?;
        let mut named = b.grads(&g, &grads);
        clip_grad_norm(&mut named, self.model.config.clip_norm);
        self.opt.step(&mut self.model.net.params, &named)?;

        let mut out = StepLosses {
            recon: g.value(l_r).item(),
            cross: g.value(l_c).item(),
            adv: None,
        };
        if let (Some((dl, el, train)), Some(d)) = (adv, self.model.disc.as_mut()) {
            let dv = g.value(dl).item();
            if !dv.is_finite() {
                return Err(NmtError::Diverged {
                    epoch,
                    step,
                    what: "discriminator loss",
                    value: dv,
                });
            }
            let dg = g.backward(dl)?;
            self.disc_opt.step(&mut d.params, &train.grads(&g, &dg))?;
            out.adv = Some((dv, g.value(el).item()));
        }
        Ok(out)
    }

    /// Batches for one epoch: `(language, source sentences, gold translations)`.
    fn schedule(&mut self, data: &TrainData) -> Vec<(Lang, Vec<Vec<usize>>, Option<Vec<Vec<usize>>>)> {
        let bs = self.model.config.batch_size;
        let mut out = Vec::new();
        match data {
            TrainData::Supervised { pairs } => {
                let mut idx: Vec<usize> = (0..pairs.len()).collect();
                idx.shuffle(&mut self.rng);
                for chunk in idx.chunks(bs) {
                    let a: Vec<Vec<usize>> = chunk.iter().map(|&i| pairs[i].0.clone()).collect();
                    let b: Vec<Vec<usize>> = chunk.iter().map(|&i| pairs[i].1.clone()).collect();
                    out.push((Lang::L0, a.clone(), Some(b.clone())));
                    out.push((Lang::L1, b, Some(a)));
                }
            }
            TrainData::Unsupervised { mono, .. } => {
                let mut per_lang: Vec<Vec<Vec<Vec<usize>>>> = Vec::new();
                for corpus in mono {
                    let mut idx: Vec<usize> = (0..corpus.len()).collect();
                    idx.shuffle(&mut self.rng);
                    per_lang.push(idx.chunks(bs).map(|c| c.iter().map(|&i| corpus[i].clone()).collect()).collect());
                }
                let n = per_lang[0].len().max(per_lang[1].len());
                for i in 0..n {
                    for lang in Lang::BOTH {
                        if let Some(batch) = per_lang[lang.index()].get(i) {
                            out.push((lang, batch.clone(), None));
                        }
                    }
                }
            }
        }
        out
    }

    /// Train one epoch, then score on `valid` (aligned `(l0, l1)` pairs).
    pub fn train_epoch(&mut self, data: &TrainData, valid: &[(Vec<usize>, Vec<usize>)]) -> Result<EpochLog, NmtError> {
        let epoch = self.epoch + 1;
        let cfg = self.model.config.clone();
        match (cfg.mode, data) {
            (TrainMode::Supervised, TrainData::Supervised { .. }) | (TrainMode::Unsupervised, TrainData::Unsupervised { .. }) => {}
            _ => return Err(NmtError::Config(format!("{:?} mode does not match the supplied corpus", cfg.mode))),
        }
        let kind = cfg.translator_kind(epoch);
        let tf = self.translator(kind, data)?;
        let batches = self.schedule(data);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut adv_steps = 0usize;
        for (step, (lang, src, gold)) in batches.iter().enumerate() {
            let l = self.step(src, *lang, gold.as_deref(), &tf, epoch, step)?;
            sums.0 += l.recon;
            sums.1 += l.cross;
            if let Some((d, e)) = l.adv {
                sums.2 += d;
                sums.3 += e;
                adv_steps += 1;
            }
            debug!("epoch {epoch} step {step} {lang}: recon {:.4} cross {:.4}", l.recon, l.cross);
        }
        let steps = batches.len().max(1) as f64;
        let (bleu_l0_l1, bleu_l1_l0, invariance) = if valid.is_empty() {
            (None, None, None)
        } else {
            let inv = &valid[..valid.len().min(cfg.invariance_pairs)];
            (
                Some(self.model.bleu(valid, Lang::L0)?),
                Some(self.model.bleu(valid, Lang::L1)?),
                Some(self.model.invariance(inv)?),
            )
        };
        let log = EpochLog {
            epoch,
            translator: kind,
            steps: batches.len(),
            recon: sums.0 / steps,
            cross: sums.1 / steps,
            adv_disc: (adv_steps > 0).then(|| sums.2 / adv_steps as f64),
            adv_enc: (adv_steps > 0).then(|| sums.3 / adv_steps as f64),
            bleu_l0_l1,
            bleu_l1_l0,
            invariance,
        };
        info!("{}", log.to_json());
        self.epoch = epoch;
        self.logs.push(log.clone());
        Ok(log)
    }

    /// Run the configured number of epochs, calling `on_epoch` after each.
    pub fn train(
        &mut self,
        data: &TrainData,
        valid: &[(Vec<usize>, Vec<usize>)],
        mut on_epoch: impl FnMut(&NmtTrainer, &EpochLog) -> Result<(), NmtError>,
    ) -> Result<(), NmtError> {
        while self.epoch < self.model.config.epochs {
            let log = self.train_epoch(data, valid)?;
            on_epoch(self, &log)?;
        }
        Ok(())
    }
}

impl NmtModel {
    /// Parameters that receive gradient from a reconstruction pass in `lang`.
    pub fn params_touched(&self, lang: Lang) -> Result<BTreeSet<String>, NmtError> {
        let v = self.vocab()[lang.index()];
        let probe = vec![vec![RESERVED, (RESERVED + 1).min(v - 1), RESERVED]];
        let mut g = Graph::new();
        let b = self.net.bind(&mut g, |_| true);
        let enc = self.net.encode_batch(&mut g, &b, &probe, lang)?;
        let loss = self.net.teacher_forced_loss(&mut g, &b, &enc, &probe, lang)?;
        let grads = g.backward(loss)?;
        Ok(b.grads(&g, &grads)
            .into_iter()
            .filter(|(_, t)| t.max_abs() > 0.0)
            .map(|(k, _)| k)
            .collect())
    }

    /// Both languages route through the same shared tensors; only the
    /// embedding tables and projection heads are language-specific.
    pub fn check_shared_weights(&self) -> Result<bool, NmtError> {
        let t0 = self.params_touched(Lang::L0)?;
        let t1 = self.params_touched(Lang::L1)?;
        let shared = |s: &BTreeSet<String>| -> BTreeSet<String> {
            s.iter().filter(|n| Seq2Seq::language_of(n).is_none()).cloned().collect()
        };
        let own = |s: &BTreeSet<String>, l: Lang| s.iter().all(|n| Seq2Seq::language_of(n).is_none_or(|x| x == l));
        let all_shared: BTreeSet<String> = self
            .net
            .params
            .names()
            .filter(|n| Seq2Seq::language_of(n).is_none())
            .cloned()
            .collect();
        Ok(shared(&t0) == shared(&t1) && shared(&t0) == all_shared && own(&t0, Lang::L0) && own(&t1, Lang::L1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::NoiseConfig;
    use crate::nmt::NmtConfig;

    fn tiny(mode: TrainMode) -> NmtConfig {
        NmtConfig {
            mode,
            embed: 16,
            hidden: 24,
            attn: 16,
            batch_size: 10,
            lr: 1e-2,
            beta1: 0.9,
            noise: NoiseConfig::none(),
            max_len: 8,
            ..NmtConfig::default()
        }
    }

    fn sentences() -> Vec<Vec<usize>> {
        (0..10).map(|i| (0..3 + i % 4).map(|k| 5 + (i * 3 + k * 7) % 11).collect()).collect()
    }

    #[test]
    fn fresh_loss_near_log_vocab() {
        let m = NmtModel::new(tiny(TrainMode::Supervised), [40, 40], 3).unwrap();
        let mut g = Graph::new();
        let b = m.net.bind(&mut g, |_| false);
        let s = sentences();
        let enc = m.net.encode_batch(&mut g, &b, &s, Lang::L0).unwrap();
        let l = m.net.teacher_forced_loss(&mut g, &b, &enc, &s, Lang::L0).unwrap();
        let v = g.value(l).item();
        assert!((v - 40f64.ln()).abs() < 0.1 * 40f64.ln(), "{v}");
    }

    #[test]
    fn overfit_autoencoder_roundtrips() {
        let s = sentences();
        let cfg = NmtConfig {
            epochs: 300,
            ..tiny(TrainMode::Supervised)
        };
        let model = NmtModel::new(cfg, [20, 20], 4).unwrap();
        let mut tr = NmtTrainer::new(model, 4);
        let data = TrainData::Supervised {
            pairs: s.iter().map(|x| (x.clone(), x.clone())).collect(),
        };
        tr.train(&data, &[], |_, _| Ok(())).unwrap();
        let last = tr.logs.last().unwrap();
        assert!(last.recon < 0.1, "recon {}", last.recon);
        let out = tr.model.translate(&s, Lang::L0, Lang::L0).unwrap();
        assert_eq!(out, s);
        assert!(tr.model.check_shared_weights().unwrap());
    }

    #[test]
    fn mode_mismatch_is_error() {
        let model = NmtModel::new(tiny(TrainMode::Supervised), [20, 20], 5).unwrap();
        let mut tr = NmtTrainer::new(model, 5);
        let wbw = WbwPair {
            l0_to_l1: crate::xlingual::WbwTable { map: (0..20).collect() },
            l1_to_l0: crate::xlingual::WbwTable { map: (0..20).collect() },
        };
        let data = TrainData::Unsupervised {
            mono: [sentences(), sentences()],
            wbw,
        };
        assert!(matches!(tr.train_epoch(&data, &[]), Err(NmtError::Config(_))));
    }

    #[test]
    fn translator_switches_once_at_mtf() {
        let cfg = NmtConfig {
            mtf_epoch: 2,
            epochs: 3,
            ..tiny(TrainMode::Unsupervised)
        };
        let model = NmtModel::new(cfg, [20, 20], 6).unwrap();
        let mut tr = NmtTrainer::new(model, 6);
        let wbw = WbwPair {
            l0_to_l1: crate::xlingual::WbwTable { map: (0..20).collect() },
            l1_to_l0: crate::xlingual::WbwTable { map: (0..20).collect() },
        };
        let data = TrainData::Unsupervised {
            mono: [sentences(), sentences()],
            wbw,
        };
        tr.train(&data, &[], |_, _| Ok(())).unwrap();
        let kinds: Vec<_> = tr.logs.iter().map(|l| l.translator).collect();
        assert_eq!(
            kinds,
            [TranslatorKind::WordByWord, TranslatorKind::ModelBackTranslation, TranslatorKind::ModelBackTranslation]
        );
        let line = tr.logs[0].to_json();
        assert!(line.contains("\"translator\":\"word-by-word\""));
    }

    #[test]
    fn adversarial_training_runs() {
        let cfg = NmtConfig {
            use_adv: true,
            disc_hidden: 16,
            epochs: 2,
            ..tiny(TrainMode::Supervised)
        };
        let model = NmtModel::new(cfg, [20, 20], 7).unwrap();
        let before = model.disc.clone().unwrap();
        let mut tr = NmtTrainer::new(model, 7);
        let s = sentences();
        let data = TrainData::Supervised {
            pairs: s.iter().map(|x| (x.clone(), x.clone())).collect(),
        };
        tr.train(&data, &[], |_, _| Ok(())).unwrap();
        assert!(tr.logs.iter().all(|l| l.adv_disc.is_some()));
        assert!(!tr.model.disc.as_ref().unwrap().params.bit_eq(&before.params));
    }

    #[test]
    fn empty_sentence_cannot_be_translated() {
        let model = NmtModel::new(tiny(TrainMode::Supervised), [20, 20], 8).unwrap();
        assert!(matches!(model.translate(&[vec![]], Lang::L0, Lang::L1), Err(NmtError::EmptyInput)));
    }
}
