//! WGAN-GP over encoder code matrices.
//!
//! The generator maps Gaussian noise to a `rows x depth` matrix shaped like
//! a padded encoder output; the critic scores such matrices. Real codes come
//! from a frozen translator, and a generated code is decoded with both
//! language heads of the same decoder.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use train::{real_codes, sample_bilingual, GanData, GanEpochLog, GanStepLog, GanTrainer};

use crate::autodiff::{Graph, Var};
use crate::corpus::Lang;
use crate::nn::{Bound, CodeMatrix, ConcatMode, ParamError, ParamStore, Seq2Seq};
use crate::tensor::{Result as TResult, Tensor, TensorError};

/// Residual blocks in the generator and conv layers in the critic.
pub const CONV_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    /// Gradient-penalty weight.
    pub lambda: f64,
    pub critic_per_gen: usize,
    pub noise_dim: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Sentence length bound; codes are padded to this many tokens.
    pub max_len: usize,
    /// Odd conv kernel width.
    pub kernel: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Generated rows whose RMS falls below this are treated as padding.
    pub pad_threshold: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            lambda: 10.0,
            critic_per_gen: 1,
            noise_dim: 100,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            max_len: 20,
            kernel: 3,
            batch_size: 32,
            epochs: 10,
            pad_threshold: 0.05,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.critic_per_gen == 0 {
            return Err("critic_per_gen must be at least 1".into());
        }
        if self.noise_dim == 0 || self.max_len == 0 || self.batch_size == 0 {
            return Err("noise_dim, max_len and batch_size must be positive".into());
        }
        if self.kernel.is_multiple_of(2) {
            return Err(format!("kernel width must be odd, got {}", self.kernel));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err("invalid Adam settings".into());
        }
        if !(self.pad_threshold >= 0.0) {
            return Err("pad_threshold must be non-negative".into());
        }
        Ok(())
    }

    /// Code rows for a translator: one per token, or two in lengthwise mode.
    pub fn rows_for(&self, concat: ConcatMode) -> usize {
        match concat {
            ConcatMode::Depthwise => self.max_len,
            ConcatMode::Lengthwise => 2 * self.max_len,
        }
    }
}

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("sentence of {len} tokens exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("code depth {found} does not match the generator's {expected}")]
    Depth { found: usize, expected: usize },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("training diverged at step {step}: {what} = {value}")]
    Diverged { step: usize, what: &'static str, value: f64 },
}

/// Generator and critic parameters (`gen.*`, `critic.*`).
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub config: GanConfig,
    pub rows: usize,
    pub depth: usize,
    pub params: ParamStore,
}

fn init_fan_in<R: Rng + ?Sized>(p: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
    let r = 1.0 / (fan_in as f64).sqrt();
    p.insert(name, Tensor::uniform(shape, -r, r, rng));
}

impl GanModel {
    pub fn new(config: GanConfig, rows: usize, depth: usize, seed: u64) -> Result<Self, GanError> {
        config.validate().map_err(GanError::Config)?;
        if rows == 0 || depth == 0 {
            return Err(GanError::Config("code shape must be non-empty".into()));
        }
        let mut rng = crate::rng::derive(seed, "gan-init");
        let (k, z) = (config.kernel, config.noise_dim);
        let mut p = ParamStore::new();
        init_fan_in(&mut p, "gen.lin.w", &[z, rows * depth], z, &mut rng);
        p.init_const("gen.lin.b", &[rows * depth], 0.0);
        for i in 0..CONV_LAYERS {
            init_fan_in(&mut p, &format!("gen.res.{i}.w"), &[k, depth, depth], k * depth, &mut rng);
            p.init_const(&format!("gen.res.{i}.b"), &[depth], 0.0);
        }
        for i in 0..CONV_LAYERS {
            init_fan_in(&mut p, &format!("critic.conv.{i}.w"), &[k, depth, depth], k * depth, &mut rng);
            p.init_const(&format!("critic.conv.{i}.b"), &[depth], 0.0);
        }
        init_fan_in(&mut p, "critic.out.w", &[rows * depth, 1], rows * depth, &mut rng);
        p.init_const("critic.out.b", &[1], 0.0);
        Ok(GanModel {
            config,
            rows,
            depth,
            params: p,
        })
    }

    /// Sized to the code matrices of `net`.
    pub fn for_translator(config: GanConfig, net: &Seq2Seq, seed: u64) -> Result<Self, GanError> {
        let rows = config.rows_for(net.dims.concat);
        GanModel::new(config, rows, net.dims.depth(), seed)
    }

    pub fn from_params(config: GanConfig, rows: usize, depth: usize, params: ParamStore) -> Result<Self, GanError> {
        let template = GanModel::new(config, rows, depth, 0)?;
        params.check_against(&template.params)?;
        Ok(GanModel { params, ..template })
    }

    pub fn is_generator(name: &str) -> bool {
        name.starts_with("gen.")
    }

    pub fn is_critic(name: &str) -> bool {
        name.starts_with("critic.")
    }

    /// Noise `[B, noise_dim]` to codes `[B, rows, depth]` in (-1, 1).
    pub fn generator(&self, g: &mut Graph, b: &Bound, noise: Var) -> TResult<Var> {
        let bsz = g.shape(noise)[0];
        let x = g.matmul(noise, b.get("gen.lin.w"))?;
        let x = g.add(x, b.get("gen.lin.b"))?;
        let mut x = g.reshape(x, &[bsz, self.rows, self.depth])?;
        for i in 0..CONV_LAYERS {
            let r = g.relu(x)?;
            let r = g.conv1d(r, b.get(&format!("gen.res.{i}.w")))?;
            let r = g.add(r, b.get(&format!("gen.res.{i}.b")))?;
            x = g.add(x, r)?;
        }
        g.tanh(x)
    }

    /// Scores `[B, 1]` for codes `[B, rows, depth]`; no output squashing.
    pub fn critic(&self, g: &mut Graph, b: &Bound, codes: Var) -> TResult<Var> {
        let bsz = g.shape(codes)[0];
        let mut h = codes;
        for i in 0..CONV_LAYERS {
            h = g.conv1d(h, b.get(&format!("critic.conv.{i}.w")))?;
            h = g.add(h, b.get(&format!("critic.conv.{i}.b")))?;
            h = g.relu(h)?;
        }
        let flat = g.reshape(h, &[bsz, self.rows * self.depth])?;
        let s = g.matmul(flat, b.get("critic.out.w"))?;
        g.add(s, b.get("critic.out.b"))
    }

    /// One generated code per noise vector.
    pub fn generate(&self, noise: &Tensor) -> Result<Vec<CodeMatrix>, GanError> {
        let codes = self.generate_batch(noise)?;
        let per = self.rows * self.depth;
        Ok(codes
            .data()
            .chunks(per)
            .map(|c| CodeMatrix {
                values: Tensor::from_parts(vec![self.rows, self.depth], c.to_vec()),
            })
            .collect())
    }

    /// `[B, noise_dim]` noise to a `[B, rows, depth]` tensor.
    pub fn generate_batch(&self, noise: &Tensor) -> Result<Tensor, GanError> {
        if noise.ndim() != 2 || noise.shape()[1] != self.config.noise_dim {
            return Err(TensorError::ShapeMismatch {
                op: "generate",
                lhs: noise.shape().to_vec(),
                rhs: vec![self.config.noise_dim],
            }
            .into());
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_| false);
        let z = g.constant(noise.clone());
        let out = self.generator(&mut g, &b, z)?;
        Ok(g.value(out).clone())
    }

    /// Row mask `[B, rows]` of a generated batch: rows whose RMS is at least
    /// `pad_threshold` are real. The first row is always kept.
    pub fn row_mask(&self, codes: &Tensor) -> Tensor {
        let d = self.depth;
        let rows = self.rows;
        let mask = codes
            .data()
            .chunks(d)
            .enumerate()
            .map(|(i, r)| {
                let rms = (r.iter().map(|v| v * v).sum::<f64>() / d as f64).sqrt();
                f64::from(i % rows == 0 || rms >= self.config.pad_threshold)
            })
            .collect();
        Tensor::from_parts(vec![codes.numel() / (rows * d), rows], mask)
    }
}

/// Gradient penalty `mean_i (‖∇ D(ĉ_i)‖₂ − 1)²` at `ĉ_i = α_i real_i + (1 − α_i) fake_i`.
///
/// `real` and `fake` are `[B, ...]` values; `critic` maps a `[B, ...]` node to
/// per-sample scores. The result stays differentiable in whatever the critic
/// closes over.
pub fn gradient_penalty<F>(g: &mut Graph, real: &Tensor, fake: &Tensor, alpha: &[f64], critic: F) -> TResult<Var>
where
    F: FnOnce(&mut Graph, Var) -> TResult<Var>,
{
    if real.shape() != fake.shape() || real.ndim() < 2 || alpha.len() != real.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "gradient_penalty",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    let bsz = alpha.len();
    let per = real.numel() / bsz.max(1);
    let mixed: Vec<f64> = real
        .data()
        .chunks(per)
        .zip(fake.data().chunks(per))
        .zip(alpha)
        .flat_map(|((r, f), &a)| r.iter().zip(f).map(move |(r, f)| a * r + (1.0 - a) * f))
        .collect();
    let x = g.leaf(Tensor::from_parts(real.shape().to_vec(), mixed));
    let scores = critic(g, x)?;
    let grad = g.grad(scores, x)?;
    let flat = g.reshape(grad, &[bsz, per])?;
    let norms = g.l2_norm(flat)?;
    let dev = g.add_scalar(norms, -1.0)?;
    let sq = g.square(dev)?;
    g.mean(sq)
}

/// Encoder code for one sentence, zero-padded to `rows`.
pub fn real_code(net: &Seq2Seq, s: &[usize], lang: Lang, max_len: usize) -> Result<CodeMatrix, GanError> {
    let mut codes = real_codes(net, &[s.to_vec()], lang, max_len)?;
    Ok(codes.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{max_relative_error, numeric_gradient};
    use crate::rng::seeded;

    fn small() -> GanConfig {
        GanConfig {
            noise_dim: 6,
            max_len: 4,
            ..GanConfig::default()
        }
    }

    #[test]
    fn generator_output_shape_and_range() {
        let m = GanModel::new(small(), 4, 6, 1).unwrap();
        let noise = Tensor::randn(&[50, 6], 3.0, &mut seeded(2));
        let codes = m.generate(&noise).unwrap();
        assert_eq!(codes.len(), 50);
        for c in &codes {
            assert_eq!(c.values.shape(), &[4, 6]);
            assert!(c.values.data().iter().all(|v| v.abs() < 1.0));
        }
        let again = m.generate(&noise).unwrap();
        assert!(codes.iter().zip(&again).all(|(a, b)| a.values.bit_eq(&b.values)));
    }

    #[test]
    fn zeroed_generator_outputs_zero() {
        let mut m = GanModel::new(small(), 4, 6, 1).unwrap();
        let names: Vec<String> = m.params.names().filter(|n| GanModel::is_generator(n)).cloned().collect();
        for n in names {
            let shape = m.params.get(&n).unwrap().shape().to_vec();
            m.params.insert(n, Tensor::zeros(&shape));
        }
        let out = m.generate_batch(&Tensor::randn(&[3, 6], 1.0, &mut seeded(3))).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_noise_width_is_error() {
        let m = GanModel::new(small(), 4, 6, 1).unwrap();
        assert!(m.generate_batch(&Tensor::zeros(&[2, 5])).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            GanConfig { lambda: 0.0, ..small() },
            GanConfig { critic_per_gen: 0, ..small() },
            GanConfig { kernel: 4, ..small() },
        ] {
            assert!(matches!(GanModel::new(cfg, 4, 6, 0), Err(GanError::Config(_))));
        }
    }

    fn pair(rng: &mut crate::rng::Rng) -> (Tensor, Tensor, Vec<f64>) {
        let real = Tensor::uniform(&[3, 4, 6], -1.0, 1.0, rng);
        let fake = Tensor::uniform(&[3, 4, 6], -1.0, 1.0, rng);
        (real, fake, vec![0.2, 0.5, 0.9])
    }

    #[test]
    fn unit_gradient_critic_has_zero_penalty() {
        let (real, fake, alpha) = pair(&mut seeded(4));
        let mut g = Graph::new();
        let p = gradient_penalty(&mut g, &real, &fake, &alpha, |g, x| {
            let flat = g.reshape(x, &[3, 24])?;
            let w = g.constant(Tensor::full(&[24, 1], 1.0 / 24f64.sqrt()));
            g.matmul(flat, w)
        })
        .unwrap();
        assert!(g.value(p).item().abs() < 1e-12);
    }

    #[test]
    fn constant_critic_has_unit_penalty() {
        let (real, fake, alpha) = pair(&mut seeded(5));
        let mut g = Graph::new();
        let p = gradient_penalty(&mut g, &real, &fake, &alpha, |g, x| {
            let flat = g.reshape(x, &[3, 24])?;
            let w = g.constant(Tensor::zeros(&[24, 1]));
            g.matmul(flat, w)
        })
        .unwrap();
        assert!((g.value(p).item() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = seeded(6);
        let m = GanModel::new(small(), 4, 6, 7).unwrap();
        let (real, fake, alpha) = pair(&mut rng);
        let names = ["critic.conv.0.w", "critic.conv.4.b", "critic.out.w"];
        let penalty = |params: &ParamStore| -> f64 {
            let mut g = Graph::new();
            let b = params.bind(&mut g, |_| false);
            let p = gradient_penalty(&mut g, &real, &fake, &alpha, |g, x| m.critic(g, &b, x)).unwrap();
            g.value(p).item()
        };
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, GanModel::is_critic);
        let p = gradient_penalty(&mut g, &real, &fake, &alpha, |g, x| m.critic(g, &b, x)).unwrap();
        let grads = g.backward(p).unwrap();
        let analytic = b.grads(&g, &grads);
        for n in names {
            let numeric = numeric_gradient(
                |t| {
                    let mut ps = m.params.clone();
                    ps.insert(n, t.clone());
                    penalty(&ps)
                },
                m.params.get(n).unwrap(),
                1e-6,
            );
            let err = max_relative_error(&analytic[n], &numeric);
            assert!(err <= 1e-3, "{n}: {err}");
        }
    }

    #[test]
    fn row_mask_marks_small_rows_as_padding() {
        let m = GanModel::new(small(), 3, 2, 0).unwrap();
        let codes = Tensor::new(vec![2, 3, 2], vec![0.0, 0.0, 0.5, 0.5, 0.01, 0.0, 0.3, 0.3, 0.0, 0.0, 0.2, -0.2]).unwrap();
        let mask = m.row_mask(&codes);
        assert_eq!(mask.data(), &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn params_round_trip_through_from_params() {
        let m = GanModel::new(small(), 4, 6, 9).unwrap();
        let back = GanModel::from_params(small(), 4, 6, m.params.clone()).unwrap();
        assert_eq!(back, m);
        assert!(GanModel::from_params(small(), 5, 6, m.params).is_err());
    }
}
