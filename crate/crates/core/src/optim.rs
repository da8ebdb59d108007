//! SGD with (Nesterov) momentum and L1/L2 penalties.
//!
//! Updates touch only active positions of sparse tensors, so inactive
//! positions stay exactly 0.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::Param;
use crate::sparse::MaskedTensor;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    #[serde(default = "default_true")]
    pub nesterov: bool,
    /// L2 multiplier, added as `l2 * w` to the gradient.
    #[serde(default)]
    pub l2: f64,
    /// L1 multiplier, added as `l1 * sign(w)` to the gradient.
    #[serde(default)]
    pub l1: f64,
}

fn default_true() -> bool {
    true
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.0,
            nesterov: false,
            l2: 0.0,
            l1: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
    /// Tensors the penalties apply to (weights, not biases or normalization).
    penalized: Vec<bool>,
    /// Tensors updated elsewhere (e.g. by a rewiring rule).
    frozen: Vec<bool>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &[Param], penalized: Vec<bool>) -> Self {
        let velocity = params
            .iter()
            .map(|p| vec![0.0; grad_len(p)])
            .collect();
        let frozen = vec![false; params.len()];
        Self {
            config,
            velocity,
            penalized,
            frozen,
        }
    }

    pub fn set_frozen(&mut self, index: usize, frozen: bool) {
        self.frozen[index] = frozen;
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<f64>>) -> Result<()> {
        if velocity.len() != self.velocity.len()
            || velocity.iter().zip(&self.velocity).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Shape("momentum buffer layout mismatch".into()));
        }
        self.velocity = velocity;
        Ok(())
    }

    /// Rebuilds buffers after a tensor changed representation.
    pub fn resize_for(&mut self, params: &[Param]) {
        for (v, p) in self.velocity.iter_mut().zip(params) {
            if v.len() != grad_len(p) {
                *v = vec![0.0; grad_len(p)];
            }
        }
    }

    /// Clears momentum at inactive positions so regrown weights start fresh.
    pub fn reset_inactive(&mut self, params: &[Param]) {
        for (v, p) in self.velocity.iter_mut().zip(params) {
            if let Param::Sparse(t) = p {
                for (i, x) in v.iter_mut().enumerate() {
                    if !t.is_active(i) {
                        *x = 0.0;
                    }
                }
            }
        }
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        if grads.len() != params.len() {
            return Err(Error::Shape("one gradient per tensor required".into()));
        }
        let cfg = self.config;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if self.frozen[i] {
                continue;
            }
            let (l1, l2) = if self.penalized[i] { (cfg.l1, cfg.l2) } else { (0.0, 0.0) };
            let v = &mut self.velocity[i];
            let upd = |w: &mut f64, g: f64, v: &mut f64| {
                let mut d = g + l2 * *w;
                if l1 != 0.0 && *w != 0.0 {
                    d += l1 * w.signum();
                }
                if cfg.momentum != 0.0 {
                    *v = cfg.momentum * *v + d;
                    d = if cfg.nesterov { d + cfg.momentum * *v } else { *v };
                }
                *w -= lr * d;
            };
            let gd = g.data();
            match p {
                Param::Dense(t) => {
                    check_len(t.len(), gd.len())?;
                    for ((w, &g), v) in t.data_mut().iter_mut().zip(gd).zip(v.iter_mut()) {
                        upd(w, g, v);
                    }
                }
                Param::Sparse(t) => {
                    check_len(t.dense_len(), gd.len())?;
                    let (w, active) = t.values_mut_with_active();
                    for &k in active {
                        upd(&mut w[k], gd[k], &mut v[k]);
                    }
                }
                Param::Hashed(h) => {
                    let w = h.unique_mut();
                    check_len(w.len(), gd.len())?;
                    for ((w, &g), v) in w.iter_mut().zip(gd).zip(v.iter_mut()) {
                        upd(w, g, v);
                    }
                }
            }
        }
        for (i, p) in params.iter().enumerate() {
            if let Param::Sparse(t) = p {
                if t.values().iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("tensor {i} after update")));
                }
            }
        }
        Ok(())
    }
}

fn grad_len(p: &Param) -> usize {
    match p {
        Param::Hashed(h) => h.unique_count(),
        other => other.dense_len(),
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Shape(format!("gradient has {b} entries, tensor {a}")))
    }
}

/// Plain masked SGD step on one sparse tensor: `w <- w - lr * g` at active
/// positions.
pub fn masked_sgd(t: &mut MaskedTensor, grad: &[f64], lr: f64) {
    let (w, active) = t.values_mut_with_active();
    for &k in active {
        w[k] -= lr * grad[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Mask;

    fn one(w: f64) -> Vec<Param> {
        vec![Param::Dense(Tensor::from_vec(vec![w]))]
    }

    #[test]
    fn plain_sgd() {
        let mut p = one(1.0);
        let mut opt = Sgd::new(SgdConfig::default(), &p, vec![true]);
        opt.step(&mut p, &[Tensor::from_vec(vec![0.5])], 0.1).unwrap();
        assert_eq!(p[0].to_dense().data()[0], 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn l2_decay_only() {
        let mut p = one(1.0);
        let cfg = SgdConfig {
            l2: 0.0005,
            ..SgdConfig::default()
        };
        let mut opt = Sgd::new(cfg, &p, vec![true]);
        opt.step(&mut p, &[Tensor::from_vec(vec![0.0])], 0.1).unwrap();
        assert!((p[0].to_dense().data()[0] - 0.99995).abs() < 1e-15);
    }

    #[test]
    fn nesterov_matches_hand_computation() {
        let mut p = one(1.0);
        let cfg = SgdConfig {
            momentum: 0.9,
            nesterov: true,
            ..SgdConfig::default()
        };
        let mut opt = Sgd::new(cfg, &p, vec![true]);
        let g = [Tensor::from_vec(vec![1.0])];
        opt.step(&mut p, &g, 0.1).unwrap();
        // v = 1, d = 1 + 0.9 = 1.9
        assert!((p[0].to_dense().data()[0] - (1.0 - 0.19)).abs() < 1e-15);
        opt.step(&mut p, &g, 0.1).unwrap();
        // v = 1.9, d = 1 + 1.71 = 2.71
        assert!((p[0].to_dense().data()[0] - (0.81 - 0.271)).abs() < 1e-15);
    }

    #[test]
    fn masked_positions_stay_zero() {
        let t = MaskedTensor::new(vec![4], vec![0.1, 0.2, 0.3, 0.4], Mask::from_indices(4, &[1, 3])).unwrap();
        let mut p = vec![Param::Sparse(t)];
        let cfg = SgdConfig {
            momentum: 0.9,
            nesterov: true,
            l2: 0.01,
            l1: 0.01,
        };
        let mut opt = Sgd::new(cfg, &p, vec![true]);
        let g = [Tensor::from_vec(vec![5.0, 1.0, -3.0, 2.0])];
        for _ in 0..50 {
            opt.step(&mut p, &g, 0.1).unwrap();
        }
        let v = p[0].to_dense();
        assert_eq!(v.data()[0], 0.0);
        assert_eq!(v.data()[2], 0.0);
        assert!(v.data()[1] != 0.2);
    }

    #[test]
    fn rejects_negative_lr() {
        let mut p = one(1.0);
        let mut opt = Sgd::new(SgdConfig::default(), &p, vec![true]);
        assert!(opt.step(&mut p, &[Tensor::from_vec(vec![0.0])], -1.0).is_err());
    }
}
