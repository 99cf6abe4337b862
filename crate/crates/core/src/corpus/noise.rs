use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TokenSeq;

/// Input corruption for denoising: word drop, local shuffle, and the
/// Gaussian noise added to the decoder's code input during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub p_drop: f64,
    pub k_shuffle: usize,
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            p_drop: 0.1,
            k_shuffle: 3,
            sigma: 0.3,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            p_drop: 0.0,
            k_shuffle: 0,
            sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(format!("p_drop must be in [0, 1), got {}", self.p_drop));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Drop each token with `p_drop`, then shuffle the survivors by sorting on
/// `position + U(0, k_shuffle + 1)`, which moves no token more than
/// `k_shuffle` places. A non-empty input always keeps at least one token.
pub fn apply_noise<R: Rng + ?Sized>(seq: &TokenSeq, cfg: &NoiseConfig, rng: &mut R) -> TokenSeq {
    let mut kept: Vec<usize> = if cfg.p_drop > 0.0 {
        seq.ids.iter().copied().filter(|_| rng.random::<f64>() >= cfg.p_drop).collect()
    } else {
        seq.ids.clone()
    };
    if kept.is_empty() && !seq.ids.is_empty() {
        kept.push(seq.ids[rng.random_range(0..seq.ids.len())]);
    }
    if cfg.k_shuffle > 0 && kept.len() > 1 {
        let span = (cfg.k_shuffle + 1) as f64;
        let mut keyed: Vec<(f64, usize)> = kept
            .iter()
            .enumerate()
            .map(|(i, &id)| (i as f64 + rng.random::<f64>() * span, id))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
        kept = keyed.into_iter().map(|(_, id)| id).collect();
    }
    TokenSeq::new(kept, seq.lang)
}
