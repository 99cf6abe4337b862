use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::tensor::{Tensor, TensorError};

fn check_shape(name: &str, p: &Tensor, g: &Tensor) -> Result<(), TensorError> {
    if p.shape() != g.shape() {
        return Err(TensorError::Invalid {
            op: "optimizer",
            msg: format!("gradient for `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape()),
        });
    }
    Ok(())
}

/// Rescale `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let total = grads.values().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
    if total > max_norm && total > 0.0 {
        let s = max_norm / total;
        for g in grads.values_mut() {
            *g = g.map(|x| x * s);
        }
    }
    total
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get(name) else { continue };
            check_shape(name, p, g)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            let mut data = p.to_vec();
            for (((x, &gi), mi), vi) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *x -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            let shape = p.shape().to_vec();
            params.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(())
    }
}

/// RMSProp without momentum: `ms ← ρ·ms + (1−ρ)·g²`, `x ← x − lr·g/(√ms + ε)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    pub step: u64,
    #[serde(skip)]
    mean_square: BTreeMap<String, Vec<f64>>,
}

impl RmsProp {
    pub const DEFAULT_DECAY: f64 = 0.9;

    pub fn new(lr: f64) -> Self {
        RmsProp {
            lr,
            decay: Self::DEFAULT_DECAY,
            eps: 1e-8,
            step: 0,
            mean_square: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<(), TensorError> {
        self.step += 1;
        for (name, g) in grads {
            let Some(p) = params.get(name) else { continue };
            check_shape(name, p, g)?;
            let ms = self.mean_square.entry(name.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let mut data = p.to_vec();
            for ((x, &gi), s) in data.iter_mut().zip(g.data()).zip(ms.iter_mut()) {
                *s = self.decay * *s + (1.0 - self.decay) * gi * gi;
                let denom = s.sqrt() + self.eps;
                if denom > 0.0 {
                    *x -= self.lr * gi / denom;
                }
            }
            let shape = p.shape().to_vec();
            params.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(())
    }
}
