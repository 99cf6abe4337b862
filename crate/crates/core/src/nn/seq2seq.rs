use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lstm::init_lstm;
use super::{lstm_step, Bound, CodeMatrix, LstmVars, ParamError, ParamStore};
use crate::autodiff::{Graph, Var};
use crate::corpus::{pad_batch, Lang, BOS_L0, BOS_L1, EOS, PAD};
use crate::tensor::{Result, Tensor, TensorError};

const MASK_NEG: f64 = -1e9;

/// How forward and backward encoder states form the code matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConcatMode {
    /// Row `t` is `[fwd_t ‖ bwd_t]`; shape `T x 2H`.
    #[default]
    Depthwise,
    /// Forward rows followed by backward rows; shape `2T x H`.
    Lengthwise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: [usize; 2],
    pub embed: usize,
    pub hidden: usize,
    pub attn: usize,
    pub layers: usize,
    #[serde(default)]
    pub concat: ConcatMode,
}

impl ModelDims {
    /// Width of a code-matrix row.
    pub fn depth(&self) -> usize {
        match self.concat {
            ConcatMode::Depthwise => 2 * self.hidden,
            ConcatMode::Lengthwise => self.hidden,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.vocab.iter().any(|&v| v <= crate::corpus::RESERVED) {
            return Err(format!("vocabulary sizes {:?} leave no content words", self.vocab));
        }
        if self.embed == 0 || self.hidden == 0 || self.attn == 0 {
            return Err("embed, hidden and attn sizes must be positive".into());
        }
        if !(1..=2).contains(&self.layers) {
            return Err(format!("encoder layers must be 1 or 2, got {}", self.layers));
        }
        Ok(())
    }
}

/// Encoder output inside a graph, ready for attention.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// `[B, T', depth]`
    pub code: Var,
    /// Code rows projected into the alignment space, `[B, T', attn]`.
    pub keys: Var,
    /// Additive score mask: 0 for real rows, a large negative for padding.
    pub bias: Var,
    /// `[B, T']` 0/1 mask of real rows.
    pub mask: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct DecState {
    h: Var,
    c: Var,
    ctx: Var,
    out: Var,
}

/// Result of greedy decoding one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    /// Emitted tokens, EOS excluded.
    pub ids: Vec<usize>,
    /// Whether decoding stopped on EOS rather than on the length limit.
    pub ended: bool,
}

impl DecodeOutput {
    /// Number of decoder steps taken, counting EOS.
    pub fn emitted(&self) -> usize {
        self.ids.len() + usize::from(self.ended)
    }
}

/// Drop the first EOS and everything after it.
pub fn strip_eos(ids: &[usize]) -> Vec<usize> {
    ids.iter().copied().take_while(|&t| t != EOS).collect()
}

fn emb_name(lang: Lang) -> String {
    format!("emb.{lang}")
}

fn proj_names(lang: Lang) -> (String, String) {
    (format!("proj.{lang}.w"), format!("proj.{lang}.b"))
}

/// Shared bidirectional-LSTM encoder and attention decoder. Only the
/// embedding tables `emb.*` and projection heads `proj.*` are per-language.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub dims: ModelDims,
    pub params: ParamStore,
}

impl Seq2Seq {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let (e, h, a, d) = (dims.embed, dims.hidden, dims.attn, dims.depth());
        for lang in Lang::BOTH {
            p.init_uniform(&emb_name(lang), &[dims.vocab[lang.index()], e], rng);
        }
        for layer in 0..dims.layers {
            let input = if layer == 0 { e } else { 2 * h };
            for dir in ["fwd", "bwd"] {
                init_lstm(&mut p, &format!("enc.{layer}.{dir}"), input, h, rng);
            }
        }
        p.init_uniform("attn.w_q", &[h, a], rng);
        p.init_uniform("attn.w_k", &[d, a], rng);
        p.init_const("attn.b", &[a], 0.0);
        p.init_uniform("attn.v", &[a, 1], rng);
        init_lstm(&mut p, "dec.lstm", e + d, h, rng);
        p.init_uniform("dec.out.w", &[h + d, h], rng);
        p.init_const("dec.out.b", &[h], 0.0);
        for lang in Lang::BOTH {
            let (w, b) = proj_names(lang);
            p.init_uniform(&w, &[h, dims.vocab[lang.index()]], rng);
            p.init_const(&b, &[dims.vocab[lang.index()]], 0.0);
        }
        Seq2Seq { dims, params: p }
    }

    /// Rebuild from stored parameters, checking names and shapes.
    pub fn from_params(dims: ModelDims, params: ParamStore) -> std::result::Result<Self, ParamError> {
        let template = Seq2Seq::new(dims.clone(), &mut crate::rng::seeded(0));
        params.check_against(&template.params)?;
        Ok(Seq2Seq { dims, params })
    }

    /// The language a parameter belongs to, or `None` for shared weights.
    pub fn language_of(name: &str) -> Option<Lang> {
        let rest = name.strip_prefix("emb.").or_else(|| name.strip_prefix("proj."))?;
        Lang::BOTH.into_iter().find(|l| rest.starts_with(&l.to_string()))
    }

    pub fn is_embedding(name: &str) -> bool {
        name.starts_with("emb.")
    }

    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        self.params.bind(g, trainable)
    }

    fn check_ids(&self, seqs: &[Vec<usize>], lang: Lang) -> Result<()> {
        let v = self.dims.vocab[lang.index()];
        for s in seqs {
            if s.is_empty() {
                return Err(TensorError::Invalid { op: "encode", msg: "empty sequence".into() });
            }
            if let Some(&bad) = s.iter().find(|&&id| id >= v) {
                return Err(TensorError::Invalid {
                    op: "encode",
                    msg: format!("token id {bad} outside {lang} vocabulary of {v}"),
                });
            }
        }
        Ok(())
    }

    /// Encode a batch of id sequences (no EOS needed) of language `lang`.
    pub fn encode_batch(&self, g: &mut Graph, b: &Bound, seqs: &[Vec<usize>], lang: Lang) -> Result<EncodedBatch> {
        self.check_ids(seqs, lang)?;
        let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let batch = pad_batch(seqs, t_max).map_err(|msg| TensorError::Invalid { op: "encode", msg })?;
        let bsz = batch.batch;
        let emb = b.get(&emb_name(lang));
        let mut xs = Vec::with_capacity(t_max);
        let mut masks = Vec::with_capacity(t_max);
        for t in 0..t_max {
            xs.push(g.gather_rows(emb, &batch.column(t))?);
            let m = batch.mask_column(t);
            masks.push(if m.iter().all(|&v| v == 1.0) {
                None
            } else {
                Some(g.constant(Tensor::from_parts(vec![bsz, 1], m)))
            });
        }
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for layer in 0..self.dims.layers {
            let fcell = LstmVars::bind(g, b, &format!("enc.{layer}.fwd"))?;
            let bcell = LstmVars::bind(g, b, &format!("enc.{layer}.bwd"))?;
            fwd = run_direction(g, &fcell, &xs, &masks, false)?;
            bwd = run_direction(g, &bcell, &xs, &masks, true)?;
            if layer + 1 < self.dims.layers {
                xs = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(&f, &bk)| g.concat(&[f, bk], 1))
                    .collect::<Result<_>>()?;
            }
        }
        let h = self.dims.hidden;
        let (code, mask) = match self.dims.concat {
            ConcatMode::Depthwise => {
                let rows: Vec<Var> = fwd
                    .iter()
                    .zip(&bwd)
                    .map(|(&f, &bk)| g.concat(&[f, bk], 1))
                    .collect::<Result<_>>()?;
                let flat = g.concat(&rows, 1)?;
                let code = g.reshape(flat, &[bsz, t_max, 2 * h])?;
                (code, Tensor::from_parts(vec![bsz, t_max], batch.mask.clone()))
            }
            ConcatMode::Lengthwise => {
                let all: Vec<Var> = fwd.iter().chain(&bwd).copied().collect();
                let flat = g.concat(&all, 1)?;
                let code = g.reshape(flat, &[bsz, 2 * t_max, h])?;
                let mut m = Vec::with_capacity(bsz * 2 * t_max);
                for row in batch.mask.chunks(t_max) {
                    m.extend_from_slice(row);
                    m.extend_from_slice(row);
                }
                (code, Tensor::from_parts(vec![bsz, 2 * t_max], m))
            }
        };
        self.prepare_code(g, b, code, mask)
    }

    /// Wrap an existing code tensor (e.g. a generated one) for decoding.
    pub fn prepare_code(&self, g: &mut Graph, b: &Bound, code: Var, mask: Tensor) -> Result<EncodedBatch> {
        let keys = g.matmul(code, b.get("attn.w_k"))?;
        let bias = g.constant(mask.map(|m| if m > 0.0 { 0.0 } else { MASK_NEG }));
        Ok(EncodedBatch { code, keys, bias, mask })
    }

    /// Additive attention of decoder states `h: [B, H]` over the code.
    /// Returns the context `[B, depth]` and weights `[B, T']`.
    pub fn attend(&self, g: &mut Graph, b: &Bound, enc: &EncodedBatch, h: Var) -> Result<(Var, Var)> {
        let s = g.shape(enc.keys).to_vec();
        let (bsz, t, a) = (s[0], s[1], s[2]);
        let q = g.matmul(h, b.get("attn.w_q"))?;
        let q = g.add(q, b.get("attn.b"))?;
        let q = g.reshape(q, &[bsz, 1, a])?;
        let e = g.add(enc.keys, q)?;
        let e = g.tanh(e)?;
        let scores = g.matmul(e, b.get("attn.v"))?;
        let scores = g.reshape(scores, &[bsz, t])?;
        let scores = g.add(scores, enc.bias)?;
        let alpha = g.softmax(scores)?;
        let a3 = g.reshape(alpha, &[bsz, 1, t])?;
        let ctx = g.bmm(a3, enc.code)?;
        let ctx = g.reshape(ctx, &[bsz, self.dims.depth()])?;
        Ok((ctx, alpha))
    }

    /// One decoder step. The LSTM reads the previous token and the previous
    /// context; attention then uses the new state, and the output layer
    /// combines both: `o = tanh(W_o [h; ctx] + b_o)`.
    fn decoder_step(
        &self,
        g: &mut Graph,
        b: &Bound,
        cell: &LstmVars,
        enc: &EncodedBatch,
        lang: Lang,
        prev: &[usize],
        state: DecState,
    ) -> Result<DecState> {
        let emb = g.gather_rows(b.get(&emb_name(lang)), prev)?;
        let x = g.concat(&[emb, state.ctx], 1)?;
        let (h, c) = lstm_step(g, x, state.h, state.c, cell)?;
        let (ctx, _) = self.attend(g, b, enc, h)?;
        let hc = g.concat(&[h, ctx], 1)?;
        let o = g.matmul(hc, b.get("dec.out.w"))?;
        let o = g.add(o, b.get("dec.out.b"))?;
        let out = g.tanh(o)?;
        Ok(DecState { h, c, ctx, out })
    }

    fn project(&self, g: &mut Graph, b: &Bound, h: Var, lang: Lang) -> Result<Var> {
        let (w, bias) = proj_names(lang);
        let logits = g.matmul(h, b.get(&w))?;
        g.add(logits, b.get(&bias))
    }

    fn initial_state(&self, g: &mut Graph, b: &Bound, enc: &EncodedBatch) -> Result<DecState> {
        let bsz = g.shape(enc.code)[0];
        let z = Tensor::zeros(&[bsz, self.dims.hidden]);
        let h = g.constant(z.clone());
        let c = g.constant(z);
        let (ctx, _) = self.attend(g, b, enc, h)?;
        Ok(DecState { h, c, ctx, out: h })
    }

    /// Teacher-forced mean token cross-entropy of decoding `targets`
    /// (EOS appended here) in language `lang` from `enc`.
    pub fn teacher_forced_loss(
        &self,
        g: &mut Graph,
        b: &Bound,
        enc: &EncodedBatch,
        targets: &[Vec<usize>],
        lang: Lang,
    ) -> Result<Var> {
        let with_eos: Vec<Vec<usize>> = targets
            .iter()
            .map(|t| t.iter().copied().chain([EOS]).collect())
            .collect();
        let t_max = with_eos.iter().map(Vec::len).max().unwrap_or(1);
        let batch = pad_batch(&with_eos, t_max).map_err(|msg| TensorError::Invalid { op: "decode", msg })?;
        let bsz = batch.batch;
        if g.shape(enc.code)[0] != bsz {
            return Err(TensorError::ShapeMismatch {
                op: "teacher_forced_loss",
                lhs: g.shape(enc.code).to_vec(),
                rhs: vec![bsz],
            });
        }
        let cell = LstmVars::bind(g, b, "dec.lstm")?;
        let mut state = self.initial_state(g, b, enc)?;
        let mut hs = Vec::with_capacity(t_max);
        let mut gold = Vec::with_capacity(t_max * bsz);
        for t in 0..t_max {
            let prev = if t == 0 { vec![lang.bos(); bsz] } else { batch.column(t - 1) };
            state = self.decoder_step(g, b, &cell, enc, lang, &prev, state)?;
            hs.push(state.out);
            gold.extend(batch.column(t));
        }
        let all = g.concat(&hs, 0)?;
        let logits = self.project(g, b, all, lang)?;
        g.cross_entropy(logits, &gold, Some(PAD))
    }

    /// Greedy decoding of every code in `enc` into `lang`, at most `max_len`
    /// steps. BOS and PAD are never emitted.
    pub fn greedy(&self, g: &mut Graph, b: &Bound, enc: &EncodedBatch, lang: Lang, max_len: usize) -> Result<Vec<DecodeOutput>> {
        let bsz = g.shape(enc.code)[0];
        let cell = LstmVars::bind(g, b, "dec.lstm")?;
        let mut state = self.initial_state(g, b, enc)?;
        let mut out = vec![DecodeOutput { ids: Vec::new(), ended: false }; bsz];
        let mut prev = vec![lang.bos(); bsz];
        let v = self.dims.vocab[lang.index()];
        for _ in 0..max_len.max(1) {
            state = self.decoder_step(g, b, &cell, enc, lang, &prev, state)?;
            let logits = self.project(g, b, state.out, lang)?;
            let lv = g.value(logits);
            for (i, o) in out.iter_mut().enumerate() {
                let row = &lv.data()[i * v..(i + 1) * v];
                let best = argmax_allowed(row);
                prev[i] = best;
                if o.ended {
                    prev[i] = EOS;
                } else if best == EOS {
                    o.ended = true;
                } else {
                    o.ids.push(best);
                }
            }
            if out.iter().all(|o| o.ended) {
                break;
            }
        }
        Ok(out)
    }

    /// Encode without gradients; returns per-sentence code matrices.
    pub fn encode(&self, seqs: &[Vec<usize>], lang: Lang) -> Result<Vec<CodeMatrix>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let enc = self.encode_batch(&mut g, &b, seqs, lang)?;
        let code = g.value(enc.code);
        let (t, d) = (code.shape()[1], code.shape()[2]);
        Ok(seqs
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let rows = enc.mask.row(i).iter().filter(|&&m| m > 0.0).count();
                let start = i * t * d;
                let values = match self.dims.concat {
                    ConcatMode::Depthwise => code.data()[start..start + rows * d].to_vec(),
                    ConcatMode::Lengthwise => {
                        let half = t / 2;
                        let n = rows / 2;
                        let mut v = code.data()[start..start + n * d].to_vec();
                        v.extend_from_slice(&code.data()[start + half * d..start + (half + n) * d]);
                        v
                    }
                };
                CodeMatrix {
                    values: Tensor::from_parts(vec![rows, d], values),
                }
            })
            .collect())
    }

    /// Decode padded codes `[B, T', depth]` with a row mask `[B, T']`.
    pub fn decode_codes(&self, codes: &Tensor, mask: &Tensor, lang: Lang, max_len: usize) -> Result<Vec<DecodeOutput>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let code = g.constant(codes.clone());
        let enc = self.prepare_code(&mut g, &b, code, mask.clone())?;
        self.greedy(&mut g, &b, &enc, lang, max_len)
    }

    pub fn decode_greedy(&self, code: &CodeMatrix, lang: Lang, max_len: usize) -> Result<DecodeOutput> {
        let codes = code.values.reshape(&[1, code.len(), code.depth()])?;
        let mask = Tensor::ones(&[1, code.len()]);
        Ok(self.decode_codes(&codes, &mask, lang, max_len)?.remove(0))
    }

    /// Encode in `from`, decode greedily into `to`.
    pub fn translate(&self, seqs: &[Vec<usize>], from: Lang, to: Lang, max_len: usize) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let enc = self.encode_batch(&mut g, &b, seqs, from)?;
        Ok(self.greedy(&mut g, &b, &enc, to, max_len)?.into_iter().map(|o| o.ids).collect())
    }

    /// Attention of a single decoder state `[H]` over one code matrix.
    pub fn attention_context(&self, dec_state: &Tensor, code: &CodeMatrix) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, |_| false);
        let codes = g.constant(code.values.reshape(&[1, code.len(), code.depth()])?);
        let enc = self.prepare_code(&mut g, &b, codes, Tensor::ones(&[1, code.len()]))?;
        let h = g.constant(dec_state.reshape(&[1, self.dims.hidden])?);
        let (ctx, alpha) = self.attend(&mut g, &b, &enc, h)?;
        Ok((
            g.value(ctx).reshape(&[self.dims.depth()])?,
            g.value(alpha).reshape(&[code.len()])?,
        ))
    }
}

/// Free-function form of [`Seq2Seq::attention_context`].
pub fn attention_context(model: &Seq2Seq, dec_state: &Tensor, code: &CodeMatrix) -> Result<(Tensor, Tensor)> {
    model.attention_context(dec_state, code)
}

fn argmax_allowed(row: &[f64]) -> usize {
    let mut best = EOS;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if i == PAD || i == BOS_L0 || i == BOS_L1 {
            continue;
        }
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Run one LSTM direction over `xs`. Padding steps keep the previous state;
/// outputs at padding steps are zero.
fn run_direction(g: &mut Graph, cell: &LstmVars, xs: &[Var], masks: &[Option<Var>], reverse: bool) -> Result<Vec<Var>> {
    let bsz = g.shape(xs[0])[0];
    let z = Tensor::zeros(&[bsz, cell.hidden]);
    let mut h = g.constant(z.clone());
    let mut c = g.constant(z);
    let mut out = vec![h; xs.len()];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    for t in order {
        let (h2, c2) = lstm_step(g, xs[t], h, c, cell)?;
        match masks[t] {
            None => {
                h = h2;
                c = c2;
                out[t] = h;
            }
            Some(m) => {
                let dh = g.sub(h2, h)?;
                let dh = g.mul(m, dh)?;
                h = g.add(h, dh)?;
                let dc = g.sub(c2, c)?;
                let dc = g.mul(m, dc)?;
                c = g.add(c, dc)?;
                out[t] = g.mul(m, h)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dims() -> ModelDims {
        ModelDims {
            vocab: [12, 14],
            embed: 6,
            hidden: 5,
            attn: 4,
            layers: 1,
            concat: ConcatMode::Depthwise,
        }
    }

    #[test]
    fn code_shapes() {
        let m = Seq2Seq::new(dims(), &mut seeded(1));
        let codes = m.encode(&[vec![5, 6, 7, 8, 9], vec![5]], Lang::L0).unwrap();
        assert_eq!(codes[0].values.shape(), &[5, 10]);
        assert_eq!(codes[1].values.shape(), &[1, 10]);
        let mut d2 = dims();
        d2.layers = 2;
        let m2 = Seq2Seq::new(d2, &mut seeded(1));
        assert_eq!(m2.encode(&[vec![5, 6, 7]], Lang::L1).unwrap()[0].values.shape(), &[3, 10]);
        let mut dl = dims();
        dl.concat = ConcatMode::Lengthwise;
        let ml = Seq2Seq::new(dl, &mut seeded(1));
        assert_eq!(ml.encode(&[vec![5, 6, 7], vec![5]], Lang::L1).unwrap()[0].values.shape(), &[6, 5]);
    }

    #[test]
    fn padding_does_not_change_codes() {
        let m = Seq2Seq::new(dims(), &mut seeded(2));
        let alone = m.encode(&[vec![5, 6]], Lang::L0).unwrap();
        let batched = m.encode(&[vec![5, 6], vec![7, 8, 9, 10]], Lang::L0).unwrap();
        for (a, b) in alone[0].values.data().iter().zip(batched[0].values.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_id_is_error() {
        let m = Seq2Seq::new(dims(), &mut seeded(3));
        assert!(m.encode(&[vec![5, 12]], Lang::L0).is_err());
        assert!(m.encode(&[vec![5, 12]], Lang::L1).is_ok());
        assert!(m.encode(&[vec![]], Lang::L1).is_err());
    }

    #[test]
    fn zero_parameter_encoder_gives_zero_code() {
        let mut m = Seq2Seq::new(dims(), &mut seeded(4));
        let names: Vec<String> = m.params.names().cloned().collect();
        for n in names {
            let s = m.params.get(&n).unwrap().shape().to_vec();
            m.params.init_const(&n, &s, 0.0);
        }
        let fwd = m.encode(&[vec![5, 6, 7]], Lang::L0).unwrap();
        let rev = m.encode(&[vec![7, 6, 5]], Lang::L0).unwrap();
        assert!(fwd[0].values.data().iter().chain(rev[0].values.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn attention_single_row_and_uniform() {
        let m = Seq2Seq::new(dims(), &mut seeded(5));
        let h = Tensor::uniform(&[5], -1.0, 1.0, &mut seeded(6));
        let one = CodeMatrix { values: Tensor::uniform(&[1, 10], -1.0, 1.0, &mut seeded(7)) };
        let (ctx, w) = m.attention_context(&h, &one).unwrap();
        assert_eq!(w.data(), &[1.0]);
        for (a, b) in ctx.data().iter().zip(one.values.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let row: Vec<f64> = one.values.to_vec();
        let same = CodeMatrix {
            values: Tensor::new(vec![4, 10], row.repeat(4)).unwrap(),
        };
        let (_, w) = m.attention_context(&h, &same).unwrap();
        assert!(w.data().iter().all(|&x| (x - 0.25).abs() < 1e-12));
    }

    #[test]
    fn context_in_hull_and_weights_normalised() {
        let m = Seq2Seq::new(dims(), &mut seeded(8));
        let mut rng = seeded(9);
        for _ in 0..20 {
            let code = CodeMatrix { values: Tensor::uniform(&[6, 10], -3.0, 3.0, &mut rng) };
            let h = Tensor::uniform(&[5], -1.0, 1.0, &mut rng);
            let (ctx, w) = m.attention_context(&h, &code).unwrap();
            assert!((w.sum() - 1.0).abs() < 1e-9);
            assert!(w.data().iter().all(|&x| x >= 0.0));
            for j in 0..10 {
                let col: Vec<f64> = (0..6).map(|t| code.row(t)[j]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(ctx.data()[j] >= lo - 1e-12 && ctx.data()[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let m = Seq2Seq::new(dims(), &mut seeded(10));
        let code = &m.encode(&[vec![5, 6, 7]], Lang::L0).unwrap()[0];
        let a = m.decode_greedy(code, Lang::L1, 6).unwrap();
        let b = m.decode_greedy(code, Lang::L1, 6).unwrap();
        assert_eq!(a, b);
        assert!(a.emitted() <= 6);
        assert!(a.ids.iter().all(|&t| t != PAD && t != BOS_L0 && t != BOS_L1 && t != EOS));
        assert_eq!(m.decode_greedy(code, Lang::L1, 1).unwrap().emitted(), 1);
    }

    #[test]
    fn only_heads_and_embeddings_are_per_language() {
        let m = Seq2Seq::new(dims(), &mut seeded(11));
        for name in m.params.names() {
            let per_lang = name.starts_with("emb.") || name.starts_with("proj.");
            assert_eq!(Seq2Seq::language_of(name).is_some(), per_lang, "{name}");
        }
        assert_eq!(m.params.names().filter(|n| n.starts_with("proj.") && n.ends_with(".w")).count(), 2);
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = Seq2Seq::new(dims(), &mut seeded(12));
        assert!(Seq2Seq::from_params(dims(), m.params.clone()).is_ok());
        let mut other = dims();
        other.hidden = 7;
        assert!(Seq2Seq::from_params(other, m.params).is_err());
    }

    #[test]
    fn fresh_model_loss_near_log_vocab() {
        let m = Seq2Seq::new(dims(), &mut seeded(13));
        let mut g = Graph::new();
        let b = m.bind(&mut g, |_| true);
        let src = vec![vec![5, 6, 7], vec![8, 9]];
        let enc = m.encode_batch(&mut g, &b, &src, Lang::L0).unwrap();
        let loss = m.teacher_forced_loss(&mut g, &b, &enc, &src, Lang::L0).unwrap();
        let l = g.value(loss).item();
        let ln_v = (12f64).ln();
        assert!((l - ln_v).abs() < 0.1 * ln_v, "loss {l}");
        let grads = g.backward(loss).unwrap();
        let named = b.grads(&g, &grads);
        assert_eq!(named.len(), m.params.len());
        // language-1 tensors do not take part in an l0 -> l0 pass
        assert_eq!(named["emb.l1"].max_abs(), 0.0);
        assert!(named["enc.0.fwd.w_i"].max_abs() > 0.0);
    }
}
