use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::Graph;
use crate::corpus::{pad_batch, Vocabulary, BOS_L0, EOS, PAD};
use crate::nn::{clip_grad_norm, lstm_step, Adam, Bound, LstmVars, ParamStore};
use crate::rng::derive;
use crate::tensor::{Result as TResult, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub embed: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Upper bound on content words when the vocabulary is induced from text.
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            embed: 300,
            hidden: 256,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: 5.0,
            max_vocab: 15_000,
            seed: 0,
        }
    }
}

/// Single-layer LSTM language model.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnLm {
    pub vocab_size: usize,
    pub params: ParamStore,
    /// Perplexity on the training corpus after the last epoch.
    pub train_ppl: f64,
}

impl RnnLm {
    pub fn new(vocab_size: usize, embed: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = derive(seed, "rnnlm-init");
        let mut p = ParamStore::new();
        p.init_uniform("emb", &[vocab_size, embed], &mut rng);
        crate::nn::init_lstm(&mut p, "lstm", embed, hidden, &mut rng);
        p.init_uniform("proj.w", &[hidden, vocab_size], &mut rng);
        p.init_const("proj.b", &[vocab_size], 0.0);
        RnnLm {
            vocab_size,
            params: p,
            train_ppl: f64::NAN,
        }
    }

    fn hidden(&self) -> usize {
        self.params.get("proj.w").map(|t| t.shape()[0]).unwrap_or(0)
    }

    /// Mean next-token cross-entropy over the batch and the number of
    /// predicted tokens (EOS included).
    fn batch_loss(&self, g: &mut Graph, b: &Bound, seqs: &[Vec<usize>]) -> TResult<(crate::Var, usize)> {
        if let Some(&bad) = seqs.iter().flatten().find(|&&t| t >= self.vocab_size) {
            return Err(TensorError::Invalid {
                op: "rnnlm",
                msg: format!("token id {bad} outside vocabulary of {}", self.vocab_size),
            });
        }
        let with_eos: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().copied().chain([EOS]).collect()).collect();
        let t_max = with_eos.iter().map(Vec::len).max().unwrap_or(1);
        let batch = pad_batch(&with_eos, t_max).map_err(|msg| TensorError::Invalid { op: "rnnlm", msg })?;
        let bsz = batch.batch;
        let cell = LstmVars::bind(g, b, "lstm")?;
        let z = Tensor::zeros(&[bsz, self.hidden()]);
        let mut h = g.constant(z.clone());
        let mut c = g.constant(z);
        let mut hs = Vec::with_capacity(t_max);
        let mut gold = Vec::with_capacity(bsz * t_max);
        for t in 0..t_max {
            let prev = if t == 0 { vec![BOS_L0; bsz] } else { batch.column(t - 1) };
            let x = g.gather_rows(b.get("emb"), &prev)?;
            (h, c) = lstm_step(g, x, h, c, &cell)?;
            hs.push(h);
            gold.extend(batch.column(t));
        }
        let all = g.concat(&hs, 0)?;
        let logits = g.matmul(all, b.get("proj.w"))?;
        let logits = g.add(logits, b.get("proj.b"))?;
        let loss = g.cross_entropy(logits, &gold, Some(PAD))?;
        let count = gold.iter().filter(|&&t| t != PAD).count();
        Ok((loss, count))
    }

    /// Total negative log-likelihood and token count over `corpus`.
    pub fn nll(&self, corpus: &[Vec<usize>], batch_size: usize) -> TResult<(f64, usize)> {
        let mut total = 0.0;
        let mut count = 0;
        for chunk in corpus.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let b = self.params.bind(&mut g, |_| false);
            let (loss, n) = self.batch_loss(&mut g, &b, chunk)?;
            total += g.value(loss).item() * n as f64;
            count += n;
        }
        Ok((total, count))
    }
}

/// Train an LSTM LM with Adam on id sequences (EOS appended internally).
pub fn train_rnnlm(corpus: &[Vec<usize>], vocab_size: usize, cfg: &LmConfig) -> Result<RnnLm, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Empty("training corpus"));
    }
    let mut lm = RnnLm::new(vocab_size, cfg.embed, cfg.hidden, cfg.seed);
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999);
    let mut rng = derive(cfg.seed, "rnnlm-batches");
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let seqs: Vec<Vec<usize>> = chunk.iter().map(|&i| corpus[i].clone()).collect();
            let mut g = Graph::new();
            let b = lm.params.bind(&mut g, |_| true);
            let (loss, _) = lm.batch_loss(&mut g, &b, &seqs)?;
            if !g.value(loss).item().is_finite() {
                return Err(EvalError::Tensor(TensorError::NonFinite("rnnlm loss")));
            }
            let grads = g.backward(loss)?;
            let mut named = b.grads(&g, &grads);
            clip_grad_norm(&mut named, cfg.clip_norm);
            opt.step(&mut lm.params, &named)?;
        }
    }
    lm.train_ppl = perplexity(&lm, corpus)?;
    Ok(lm)
}

/// `exp` of the mean per-token cross-entropy, EOS included, PAD excluded.
pub fn perplexity(lm: &RnnLm, corpus: &[Vec<usize>]) -> Result<f64, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Empty("evaluation corpus"));
    }
    let (total, count) = lm.nll(corpus, 64)?;
    Ok((total / count as f64).exp())
}

/// Forward and reverse perplexity, plus the real test text under the
/// forward model for scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub forward: f64,
    pub reverse: f64,
    pub real: f64,
}

fn lm_on_text(train: &[Vec<String>], cfg: &LmConfig) -> Result<(Vocabulary, RnnLm), EvalError> {
    let vocab = Vocabulary::build(train, cfg.max_vocab);
    let ids: Vec<Vec<usize>> = train.iter().map(|s| vocab.encode(s)).collect();
    let lm = train_rnnlm(&ids, vocab.len(), cfg)?;
    Ok((vocab, lm))
}

fn ppl_on_text(vocab: &Vocabulary, lm: &RnnLm, corpus: &[Vec<String>]) -> Result<f64, EvalError> {
    let ids: Vec<Vec<usize>> = corpus.iter().map(|s| vocab.encode(s)).collect();
    perplexity(lm, &ids)
}

/// F-PPL: LM trained on real training text, scored on synthetic samples.
/// R-PPL: LM trained on the samples (with their own vocabulary), scored on
/// real test text.
pub fn fwd_rev_report(
    real_train: &[Vec<String>],
    real_test: &[Vec<String>],
    synthetic: &[Vec<String>],
    cfg: &LmConfig,
) -> Result<PplReport, EvalError> {
    let (v_real, lm_real) = lm_on_text(real_train, cfg)?;
    let forward = ppl_on_text(&v_real, &lm_real, synthetic)?;
    let real = ppl_on_text(&v_real, &lm_real, real_test)?;
    let (v_syn, lm_syn) = lm_on_text(synthetic, cfg)?;
    let reverse = ppl_on_text(&v_syn, &lm_syn, real_test)?;
    Ok(PplReport { forward, reverse, real })
}
