//! Deep rewiring: sign-constrained connections updated with an L1 pull and
//! Langevin noise, deactivated when their magnitude crosses zero and
//! replaced by random dormant connections in the same tensor.
//!
//! Each active connection `k` has a fixed sign `s_k` and magnitude
//! `θ_k = |w_k|`. Per iteration:
//!
//! ```text
//! θ_k <- θ_k - lr (s_k g_k + α) + sqrt(2 lr T) ν,   ν ~ N(0, 1)
//! ```
//!
//! and `θ_k < 0` turns the connection off.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::sample_positions;
use crate::schedule::EpochSchedule;
use crate::sparse::MaskedTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepRConfig {
    /// `α`, the L1 pull on magnitudes.
    pub alpha: f64,
    pub temperature_schedule: EpochSchedule<f64>,
}

impl DeepRConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config("deepr alpha must be >= 0".into()));
        }
        if self.temperature_schedule.ranges.iter().any(|r| !(r.value >= 0.0)) {
            return Err(Error::Config("deepr temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Signs of all positions of one tensor; only entries at active positions
/// are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Signs(pub Vec<i8>);

impl Signs {
    /// Signs of the current values; zero-valued active entries draw a sign.
    pub fn from_tensor(t: &MaskedTensor, rng: &mut ChaCha20Rng) -> Self {
        let mut s = vec![1i8; t.dense_len()];
        for &k in t.active_indices() {
            let v = t.values()[k];
            s[k] = if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                random_sign(rng)
            };
        }
        Signs(s)
    }
}

fn random_sign(rng: &mut ChaCha20Rng) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeepRStepStats {
    pub deactivated: Vec<usize>,
    pub activated: Vec<usize>,
}

/// One rewiring iteration of a single tensor. `noise` drives the Langevin
/// term, `rewire` the choice of new connections and their signs.
pub fn deepr_tensor_step(
    t: &mut MaskedTensor,
    signs: &mut Signs,
    grad: &[f64],
    lr: f64,
    alpha: f64,
    temperature: f64,
    noise: &mut ChaCha20Rng,
    rewire: &mut ChaCha20Rng,
) -> Result<DeepRStepStats> {
    if grad.len() != t.dense_len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries, tensor {}",
            grad.len(),
            t.dense_len()
        )));
    }
    let sigma = (2.0 * lr * temperature).sqrt();
    let mut dead = Vec::new();
    {
        let (w, active) = t.values_mut_with_active();
        for &k in active {
            let s = signs.0[k] as f64;
            let mut theta = w[k].abs() - lr * (s * grad[k] + alpha);
            if sigma > 0.0 {
                let z: f64 = noise.sample(StandardNormal);
                theta += sigma * z;
            }
            if theta < 0.0 {
                dead.push(k);
            } else {
                w[k] = s * theta;
            }
        }
    }
    let mut picks = Vec::new();
    if !dead.is_empty() {
        t.deactivate(&dead);
        let free = t.inactive_indices();
        picks = sample_positions(rewire, free.len(), dead.len())
            .into_iter()
            .map(|i| free[i])
            .collect();
        t.activate(&picks)?;
        for &k in &picks {
            signs.0[k] = random_sign(rewire);
        }
    }
    if t.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("deepr update".into()));
    }
    Ok(DeepRStepStats {
        deactivated: dead,
        activated: picks,
    })
}
