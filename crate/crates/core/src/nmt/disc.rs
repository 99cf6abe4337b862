use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::nn::{Bound, ParamStore, RmsProp};
use crate::tensor::{Result, Tensor};

/// Feed-forward language classifier over mean-pooled codes: `layers` ReLU
/// layers of `hidden` units and one logit output.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDiscriminator {
    pub params: ParamStore,
    pub layers: usize,
}

impl LatentDiscriminator {
    pub const PREFIX: &'static str = "disc.";

    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let mut p = ParamStore::new();
        let mut width = input;
        for i in 0..layers {
            p.init_uniform(&format!("disc.{i}.w"), &[width, hidden], rng);
            p.init_const(&format!("disc.{i}.b"), &[hidden], 0.0);
            width = hidden;
        }
        p.init_uniform("disc.out.w", &[width, 1], rng);
        p.init_const("disc.out.b", &[1], 0.0);
        LatentDiscriminator { params: p, layers }
    }

    /// Logits `[N, 1]` for pooled codes `x: [N, depth]`.
    pub fn logits(&self, g: &mut Graph, b: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 0..self.layers {
            h = g.matmul(h, b.get(&format!("disc.{i}.w")))?;
            h = g.add(h, b.get(&format!("disc.{i}.b")))?;
            h = g.relu(h)?;
        }
        let out = g.matmul(h, b.get("disc.out.w"))?;
        g.add(out, b.get("disc.out.b"))
    }

    /// Fraction of rows whose predicted language (logit > 0 means l1) is right.
    pub fn accuracy(&self, x: &Tensor, labels: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_| false);
        let xv = g.constant(x.clone());
        let l = self.logits(&mut g, &b, xv)?;
        let right = g
            .value(l)
            .data()
            .iter()
            .zip(labels)
            .filter(|(&z, &y)| (z > 0.0) == (y > 0.5))
            .count();
        Ok(right as f64 / labels.len().max(1) as f64)
    }

    /// One RMSProp step on the classification loss; returns the loss.
    pub fn train_step(&mut self, opt: &mut RmsProp, x: &Tensor, labels: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, |_| true);
        let xv = g.constant(x.clone());
        let l = self.logits(&mut g, &b, xv)?;
        let loss = g.bce_with_logits(l, labels)?;
        let grads = g.backward(loss)?;
        opt.step(&mut self.params, &b.grads(&g, &grads))?;
        Ok(g.value(loss).item())
    }
}

/// Discriminator and encoder sides of the adversarial objective on pooled
/// codes `x` with language labels (0 or 1).
///
/// `train` binds the discriminator as trainable and sees `x` detached;
/// `fixed` binds it as constants so the fooling loss (flipped labels) only
/// reaches the encoder.
pub fn adversarial_loss(
    g: &mut Graph,
    disc: &LatentDiscriminator,
    train: &Bound,
    fixed: &Bound,
    x: Var,
    labels: &[f64],
) -> Result<(Var, Var)> {
    let xd = g.detach(x);
    let dl = disc.logits(g, train, xd)?;
    let disc_loss = g.bce_with_logits(dl, labels)?;
    let flipped: Vec<f64> = labels.iter().map(|y| 1.0 - y).collect();
    let el = disc.logits(g, fixed, x)?;
    let enc_loss = g.bce_with_logits(el, &flipped)?;
    Ok((disc_loss, enc_loss))
}

/// Masked mean over timesteps: `[B, T, D]` with `[B, T]` mask to `[B, D]`.
pub fn mean_pool(g: &mut Graph, code: Var, mask: &Tensor) -> Result<Var> {
    let s = g.shape(code).to_vec();
    let (bsz, t, d) = (s[0], s[1], s[2]);
    let mut w = mask.to_vec();
    for row in w.chunks_mut(t) {
        let n: f64 = row.iter().sum();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let wv = g.constant(Tensor::new(vec![bsz, 1, t], w)?);
    let pooled = g.bmm(wv, code)?;
    g.reshape(pooled, &[bsz, d])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn blobs(n: usize, shift: f64, rng: &mut crate::rng::Rng) -> (Tensor, Vec<f64>) {
        let a = Tensor::uniform(&[n, 8], -1.0, 1.0, rng);
        let b = Tensor::uniform(&[n, 8], -1.0 + shift, 1.0 + shift, rng);
        let mut data = a.to_vec();
        data.extend(b.data());
        let labels = (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect();
        (Tensor::new(vec![2 * n, 8], data).unwrap(), labels)
    }

    #[test]
    fn separable_codes_are_learned() {
        let mut rng = seeded(1);
        let mut d = LatentDiscriminator::new(8, 32, 3, &mut rng);
        let mut opt = RmsProp::new(5e-4);
        for _ in 0..100 {
            let (x, y) = blobs(32, 3.0, &mut rng);
            d.train_step(&mut opt, &x, &y).unwrap();
        }
        let (x, y) = blobs(200, 3.0, &mut rng);
        assert!(d.accuracy(&x, &y).unwrap() > 0.95);
    }

    #[test]
    fn identical_distributions_stay_near_chance() {
        let mut rng = seeded(2);
        let mut d = LatentDiscriminator::new(8, 32, 3, &mut rng);
        let mut opt = RmsProp::new(5e-4);
        for _ in 0..100 {
            let (x, y) = blobs(32, 0.0, &mut rng);
            d.train_step(&mut opt, &x, &y).unwrap();
        }
        let (x, y) = blobs(1000, 0.0, &mut rng);
        let acc = d.accuracy(&x, &y).unwrap();
        assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn adversarial_gradients_reach_the_right_side() {
        let mut rng = seeded(3);
        let d = LatentDiscriminator::new(4, 8, 2, &mut rng);
        let mut g = Graph::new();
        let train = d.params.bind(&mut g, |_| true);
        let fixed = d.params.bind(&mut g, |_| false);
        let x = g.leaf(Tensor::uniform(&[6, 4], -1.0, 1.0, &mut rng));
        let labels = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let (dl, el) = adversarial_loss(&mut g, &d, &train, &fixed, x, &labels).unwrap();
        let gd = g.backward(dl).unwrap();
        assert_eq!(gd.wrt(x).max_abs(), 0.0);
        assert!(gd.wrt(train.get("disc.0.w")).max_abs() > 0.0);
        let ge = g.backward(el).unwrap();
        assert!(ge.wrt(x).max_abs() > 0.0);
        assert_eq!(ge.wrt(train.get("disc.0.w")).max_abs(), 0.0);
    }

    #[test]
    fn mean_pool_skips_padding() {
        let mut g = Graph::new();
        let code = g.constant(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 100.0, 100.0]).unwrap());
        let mask = Tensor::new(vec![1, 3], vec![1.0, 1.0, 0.0]).unwrap();
        let p = mean_pool(&mut g, code, &mask).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 3.0]);
    }
}
