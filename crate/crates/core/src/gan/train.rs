use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{gradient_penalty, GanError, GanModel};
use crate::autodiff::{Graph, Var};
use crate::corpus::Lang;
use crate::nn::{Adam, CodeMatrix, ConcatMode, Seq2Seq};
use crate::rng::{derive, Rng, RngState};
use crate::tensor::{Result as TResult, Tensor};

const CHUNK: usize = 64;

/// Encoder codes for `seqs`, each zero-padded to the GAN row count for
/// `max_len` tokens. No noise is applied.
pub fn real_codes(net: &Seq2Seq, seqs: &[Vec<usize>], lang: Lang, max_len: usize) -> Result<Vec<CodeMatrix>, GanError> {
    if let Some(s) = seqs.iter().find(|s| s.len() > max_len) {
        return Err(GanError::TooLong { len: s.len(), max: max_len });
    }
    if seqs.iter().any(Vec::is_empty) {
        return Err(GanError::Empty("sentence"));
    }
    let rows = match net.dims.concat {
        ConcatMode::Depthwise => max_len,
        ConcatMode::Lengthwise => 2 * max_len,
    };
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(CHUNK) {
        for code in net.encode(chunk, lang)? {
            out.push(code.padded(rows).expect("length checked above"));
        }
    }
    Ok(out)
}

/// Real sentences for GAN training. With `parallel` set, line `i` of both
/// sides is the same sentence and batches keep pairs together.
#[derive(Debug, Clone)]
pub struct GanData {
    pub l0: Vec<Vec<usize>>,
    pub l1: Vec<Vec<usize>>,
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanStepLog {
    pub critic_loss: f64,
    pub gp: f64,
    /// `E D(c) - E D(ĉ)` averaged over the two languages.
    pub wasserstein: f64,
    pub w_l0: f64,
    pub w_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEpochLog {
    pub epoch: usize,
    pub critic_updates: usize,
    pub gen_updates: usize,
    pub critic_loss: f64,
    pub gen_loss: f64,
    pub gp: f64,
    pub wasserstein: f64,
}

impl GanEpochLog {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("epoch log serialises")
    }
}

/// Owns the GAN and its optimizers. The translator is only ever borrowed
/// immutably, so its weights cannot change during GAN training.
#[derive(Debug)]
pub struct GanTrainer {
    pub model: GanModel,
    gen_opt: Adam,
    critic_opt: Adam,
    rng: Rng,
    pub epoch: usize,
    pub critic_updates: usize,
    pub gen_updates: usize,
    pub logs: Vec<GanEpochLog>,
}

fn stack(parts: &[&CodeMatrix]) -> Tensor {
    let (rows, depth) = (parts[0].len(), parts[0].depth());
    let data = parts.iter().flat_map(|c| c.values.data().iter().copied()).collect();
    Tensor::from_parts(vec![parts.len(), rows, depth], data)
}

fn cat0(a: &Tensor, b: &Tensor) -> Tensor {
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = a.to_vec();
    data.extend_from_slice(b.data());
    Tensor::from_parts(shape, data)
}

struct CriticTerms {
    loss: Var,
    gp: f64,
    /// Mean scores of the fake, l0 and l1 batches.
    means: [f64; 3],
}

/// `E D(ĉ) - (E D(c0) + E D(c1)) / 2 + lambda * GP`, with the penalty taken
/// over both languages' interpolates (`alpha` has one entry per pair).
fn critic_objective<F>(
    g: &mut Graph,
    critic: F,
    fake: &Tensor,
    real: [&Tensor; 2],
    alpha: &[f64],
    lambda: f64,
) -> TResult<CriticTerms>
where
    F: Fn(&mut Graph, Var) -> TResult<Var>,
{
    let bsz = fake.shape()[0];
    let all = g.constant(cat0(&cat0(fake, real[0]), real[1]));
    let scores = critic(g, all)?;
    let mut means = [0.0; 3];
    let mut mv = Vec::with_capacity(3);
    for (i, m) in means.iter_mut().enumerate() {
        let s = g.slice(scores, 0, i * bsz, bsz)?;
        let v = g.mean(s)?;
        *m = g.value(v).item();
        mv.push(v);
    }
    let gp = gradient_penalty(g, &cat0(real[0], real[1]), &cat0(fake, fake), alpha, &critic)?;
    let real_mean = g.add(mv[1], mv[2])?;
    let real_mean = g.scale(real_mean, 0.5)?;
    let w = g.sub(mv[0], real_mean)?;
    let pen = g.scale(gp, lambda)?;
    let loss = g.add(w, pen)?;
    Ok(CriticTerms {
        loss,
        gp: g.value(gp).item(),
        means,
    })
}

impl GanTrainer {
    pub fn new(model: GanModel, seed: u64) -> Self {
        let c = &model.config;
        GanTrainer {
            gen_opt: Adam::new(c.lr, c.beta1, c.beta2),
            critic_opt: Adam::new(c.lr, c.beta1, c.beta2),
            rng: derive(seed, "gan-train"),
            model,
            epoch: 0,
            critic_updates: 0,
            gen_updates: 0,
            logs: Vec::new(),
        }
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn noise(&mut self, n: usize) -> Tensor {
        Tensor::randn(&[n, self.model.config.noise_dim], 1.0, &mut self.rng)
    }

    /// One critic update on real batches `[B, rows, depth]` of each language
    /// against a single generated batch.
    pub fn critic_step(&mut self, real_l0: &Tensor, real_l1: &Tensor) -> Result<GanStepLog, GanError> {
        let bsz = real_l0.shape()[0];
        if real_l1.shape() != real_l0.shape() {
            return Err(GanError::Config("language batches differ in shape".into()));
        }
        let noise = self.noise(bsz);
        let fake = self.model.generate_batch(&noise)?;
        let alpha: Vec<f64> = (0..2 * bsz).map(|_| self.rng.random::<f64>()).collect();
        let model = &self.model;
        let mut g = Graph::new();
        let b = model.params.bind(&mut g, GanModel::is_critic);
        let terms = critic_objective(
            &mut g,
            |g, x| model.critic(g, &b, x),
            &fake,
            [real_l0, real_l1],
            &alpha,
            model.config.lambda,
        )?;
        let (loss, means) = (terms.loss, terms.means);
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            return Err(GanError::Diverged {
                step: self.critic_updates,
                what: "critic loss",
                value: lv,
            });
        }
        let grads = g.backward(loss)?;
        let grads = b.grads(&g, &grads);
        let gpv = terms.gp;
        self.critic_opt.step(&mut self.model.params, &grads)?;
        self.critic_updates += 1;
        let (w0, w1) = (means[1] - means[0], means[2] - means[0]);
        Ok(GanStepLog {
            critic_loss: lv,
            gp: gpv,
            wasserstein: 0.5 * (w0 + w1),
            w_l0: w0,
            w_l1: w1,
        })
    }

    /// One generator update; returns `-E D(ĉ)`.
    pub fn generator_step(&mut self, batch: usize) -> Result<f64, GanError> {
        let noise = self.noise(batch);
        let model = &self.model;
        let mut g = Graph::new();
        let b = model.params.bind(&mut g, GanModel::is_generator);
        let z = g.constant(noise);
        let fake = model.generator(&mut g, &b, z)?;
        let s = model.critic(&mut g, &b, fake)?;
        let m = g.mean(s)?;
        let loss = g.neg(m)?;
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            return Err(GanError::Diverged {
                step: self.gen_updates,
                what: "generator loss",
                value: lv,
            });
        }
        let grads = g.backward(loss)?;
        let grads = b.grads(&g, &grads);
        self.gen_opt.step(&mut self.model.params, &grads)?;
        self.gen_updates += 1;
        Ok(lv)
    }

    /// Train for `config.epochs` passes over the real codes of `net`.
    pub fn train(
        &mut self,
        net: &Seq2Seq,
        data: &GanData,
        mut on_epoch: impl FnMut(&GanEpochLog),
    ) -> Result<(), GanError> {
        if net.dims.depth() != self.model.depth {
            return Err(GanError::Depth {
                found: net.dims.depth(),
                expected: self.model.depth,
            });
        }
        if data.l0.is_empty() || data.l1.is_empty() {
            return Err(GanError::Empty("training corpus"));
        }
        if data.parallel && data.l0.len() != data.l1.len() {
            return Err(GanError::Config("parallel GAN data must have equal sides".into()));
        }
        let max_len = self.model.config.max_len;
        let real = [
            real_codes(net, &data.l0, Lang::L0, max_len)?,
            real_codes(net, &data.l1, Lang::L1, max_len)?,
        ];
        for _ in 0..self.model.config.epochs {
            let log = self.train_epoch(&real, data.parallel)?;
            info!("gan {}", log.to_json());
            on_epoch(&log);
            self.logs.push(log);
        }
        Ok(())
    }

    fn train_epoch(&mut self, real: &[Vec<CodeMatrix>; 2], parallel: bool) -> Result<GanEpochLog, GanError> {
        let n = real[0].len().min(real[1].len());
        let bsz = self.model.config.batch_size.min(n);
        let mut order0: Vec<usize> = (0..real[0].len()).collect();
        order0.shuffle(&mut self.rng);
        let order1 = if parallel {
            order0.clone()
        } else {
            let mut o: Vec<usize> = (0..real[1].len()).collect();
            o.shuffle(&mut self.rng);
            o
        };
        let batches = n / bsz;
        let (c0, g0) = (self.critic_updates, self.gen_updates);
        let (mut closs, mut gloss, mut gp, mut w) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..batches {
            let idx = k * bsz..(k + 1) * bsz;
            let b0: Vec<&CodeMatrix> = order0[idx.clone()].iter().map(|&i| &real[0][i]).collect();
            let b1: Vec<&CodeMatrix> = order1[idx].iter().map(|&i| &real[1][i]).collect();
            let s = self.critic_step(&stack(&b0), &stack(&b1))?;
            debug!("critic {} w={:.4} gp={:.4}", self.critic_updates, s.wasserstein, s.gp);
            closs += s.critic_loss;
            gp += s.gp;
            w += s.wasserstein;
            if self.critic_updates.is_multiple_of(self.model.config.critic_per_gen) {
                gloss += self.generator_step(bsz)?;
            }
        }
        self.epoch += 1;
        let cu = (self.critic_updates - c0).max(1) as f64;
        let gu = self.gen_updates - g0;
        Ok(GanEpochLog {
            epoch: self.epoch,
            critic_updates: self.critic_updates - c0,
            gen_updates: gu,
            critic_loss: closs / cu,
            gen_loss: gloss / gu.max(1) as f64,
            gp: gp / cu,
            wasserstein: w / cu,
        })
    }
}

/// Decode `n` generated codes with both language heads. The same seed gives
/// the same pairs.
pub fn sample_bilingual(
    gan: &GanModel,
    net: &Seq2Seq,
    n: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, GanError> {
    if net.dims.depth() != gan.depth {
        return Err(GanError::Depth {
            found: net.dims.depth(),
            expected: gan.depth,
        });
    }
    let mut rng = derive(seed, "gan-sample");
    let mut out = Vec::with_capacity(n);
    let mut left = n;
    while left > 0 {
        let c = left.min(CHUNK);
        let noise = Tensor::randn(&[c, gan.config.noise_dim], 1.0, &mut rng);
        let codes = gan.generate_batch(&noise)?;
        let mask = gan.row_mask(&codes);
        let max_len = gan.config.max_len;
        let d0 = net.decode_codes(&codes, &mask, Lang::L0, max_len)?;
        let d1 = net.decode_codes(&codes, &mask, Lang::L1, max_len)?;
        out.extend(d0.into_iter().zip(d1).map(|(a, b)| (a.ids, b.ids)));
        left -= c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::GanConfig;
    use crate::nn::ModelDims;
    use crate::rng::seeded;

    fn net() -> Seq2Seq {
        let dims = ModelDims {
            vocab: [12, 12],
            embed: 6,
            hidden: 4,
            attn: 5,
            layers: 1,
            concat: ConcatMode::Depthwise,
        };
        Seq2Seq::new(dims, &mut seeded(1))
    }

    fn cfg() -> GanConfig {
        GanConfig {
            noise_dim: 5,
            max_len: 4,
            batch_size: 4,
            epochs: 2,
            ..GanConfig::default()
        }
    }

    fn data() -> GanData {
        let s: Vec<Vec<usize>> = (0..12).map(|i| (0..1 + i % 4).map(|k| 5 + (i + k) % 7).collect()).collect();
        GanData {
            l0: s.clone(),
            l1: s.iter().rev().cloned().collect(),
            parallel: false,
        }
    }

    #[test]
    fn real_codes_are_padded_with_zero_rows() {
        let n = net();
        let codes = real_codes(&n, &[vec![5], vec![5, 6, 7, 8]], Lang::L0, 4).unwrap();
        assert_eq!(codes[0].values.shape(), &[4, 8]);
        assert!(codes[0].row(0).iter().any(|&v| v != 0.0));
        assert!((1..4).all(|t| codes[0].row(t).iter().all(|&v| v == 0.0)));
        assert!((0..4).all(|t| codes[1].row(t).iter().any(|&v| v != 0.0)));
        assert!(matches!(
            real_codes(&n, &[vec![5; 5]], Lang::L0, 4),
            Err(GanError::TooLong { len: 5, max: 4 })
        ));
    }

    #[test]
    fn training_leaves_translator_untouched() {
        let n = net();
        let before = n.params.clone();
        let gan = GanModel::for_translator(cfg(), &n, 2).unwrap();
        let mut tr = GanTrainer::new(gan, 2);
        tr.train(&n, &data(), |_| {}).unwrap();
        assert!(n.params.bit_eq(&before));
        assert_eq!(tr.logs.len(), 2);
        assert_eq!(tr.critic_updates, 6);
        assert_eq!(tr.gen_updates, 6);
    }

    #[test]
    fn critic_per_gen_sets_update_ratio() {
        let n = net();
        let gan = GanModel::for_translator(GanConfig { critic_per_gen: 3, ..cfg() }, &n, 3).unwrap();
        let mut tr = GanTrainer::new(gan, 3);
        tr.train(&n, &data(), |_| {}).unwrap();
        assert_eq!(tr.critic_updates, 6);
        assert_eq!(tr.gen_updates, 2);
    }

    #[test]
    fn training_is_deterministic() {
        let n = net();
        let run = || {
            let gan = GanModel::for_translator(cfg(), &n, 4).unwrap();
            let mut tr = GanTrainer::new(gan, 4);
            tr.train(&n, &data(), |_| {}).unwrap();
            tr.model.params
        };
        assert!(run().bit_eq(&run()));
    }

    #[test]
    fn linear_critic_without_penalty_is_difference_of_means() {
        let mut rng = seeded(5);
        let real = Tensor::uniform(&[4, 3, 2], -1.0, 1.0, &mut rng);
        let fake = Tensor::uniform(&[4, 3, 2], -1.0, 1.0, &mut rng);
        let w: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let mean_score = |t: &Tensor| -> f64 {
            t.data().chunks(6).map(|c| c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).sum::<f64>() / 4.0
        };
        let mut g = Graph::new();
        let wv = g.constant(Tensor::new(vec![6, 1], w.clone()).unwrap());
        let critic = |g: &mut Graph, x: Var| {
            let n = g.shape(x)[0];
            let flat = g.reshape(x, &[n, 6])?;
            g.matmul(flat, wv)
        };
        let t = critic_objective(&mut g, critic, &fake, [&real, &real], &[0.5; 8], 0.0).unwrap();
        let expected = mean_score(&fake) - mean_score(&real);
        assert!((g.value(t.loss).item() - expected).abs() < 1e-12);
        // a linear critic has a constant gradient, so the penalty is (|w| - 1)^2
        let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((t.gp - (wn - 1.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_seeded_and_handles_zero() {
        let n = net();
        let gan = GanModel::for_translator(cfg(), &n, 6).unwrap();
        assert!(sample_bilingual(&gan, &n, 0, 1).unwrap().is_empty());
        let a = sample_bilingual(&gan, &n, 70, 1).unwrap();
        let b = sample_bilingual(&gan, &n, 70, 1).unwrap();
        assert_eq!(a.len(), 70);
        assert_eq!(a, b);
        assert!(a.iter().all(|(x, y)| x.len() <= 4 && y.len() <= 4));
    }

    #[test]
    fn depth_mismatch_is_error() {
        let n = net();
        let gan = GanModel::new(cfg(), 4, 6, 0).unwrap();
        assert!(matches!(sample_bilingual(&gan, &n, 1, 0), Err(GanError::Depth { .. })));
    }
}
