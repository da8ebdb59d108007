//! Weight sharing through a hash of the flat position.
//!
//! A [`HashedTensor`] stores `M` unique values; the virtual dense weight at
//! flat index `i` is `unique[slot(i)]` with
//! `slot(i) = splitmix64(seed ^ splitmix64(layer) ^ splitmix64(i + 1)) mod M`.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ParamRole};
use crate::param::{dense_init, Param};
use crate::rng::splitmix64;
use crate::sparse::initial_active_count;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashedConfig {
    /// Mixed into every slot index.
    pub hash_seed: u64,
}

/// Slot of flat index `i` in layer `layer` among `m` shared values.
pub fn hash_slot(seed: u64, layer: u64, i: u64, m: usize) -> usize {
    let h = splitmix64(seed ^ splitmix64(layer) ^ splitmix64(i.wrapping_add(1)));
    (h % m as u64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedTensor {
    shape: Vec<usize>,
    slots: Vec<usize>,
    unique: Vec<f64>,
}

impl HashedTensor {
    pub fn new(shape: Vec<usize>, m: usize, seed: u64, layer: u64, unique: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if m == 0 || m > n {
            return Err(Error::InvalidArgument(format!(
                "shared count must lie in [1, {n}], got {m}"
            )));
        }
        let slots = (0..n as u64).map(|i| hash_slot(seed, layer, i, m)).collect();
        Self::with_mapping(shape, slots, unique)
    }

    /// Explicit position-to-slot mapping.
    pub fn with_mapping(shape: Vec<usize>, slots: Vec<usize>, unique: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if slots.len() != n {
            return Err(Error::Shape(format!("{} slots for {n} positions", slots.len())));
        }
        if unique.is_empty() || slots.iter().any(|&s| s >= unique.len()) {
            return Err(Error::InvalidArgument("slot index outside shared values".into()));
        }
        Ok(Self { shape, slots, unique })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn unique_count(&self) -> usize {
        self.unique.len()
    }

    pub fn slots(&self) -> &[usize] {
        &self.slots
    }

    pub fn unique(&self) -> &[f64] {
        &self.unique
    }

    pub fn unique_mut(&mut self) -> &mut [f64] {
        &mut self.unique
    }

    pub fn materialize(&self) -> Tensor {
        let data = self.slots.iter().map(|&s| self.unique[s]).collect();
        Tensor::new(self.shape.clone(), data).expect("shape checked at construction")
    }

    /// Sums a dense-shaped gradient into the shared slots.
    pub fn accumulate_grad(&self, dense_grad: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.unique.len()];
        for (&s, &d) in self.slots.iter().zip(dense_grad) {
            g[s] += d;
        }
        g
    }
}

/// Parameters of `net` with every sparse-flagged weight replaced by a hashed
/// tensor holding `round((1-s) N_l)` shared values.
pub fn init_hashed(net: &NetworkSpec, s: f64, cfg: &HashedConfig, rng: &mut ChaCha20Rng) -> Result<Vec<Param>> {
    if !(s >= 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!("sparsity must lie in [0, 1), got {s}")));
    }
    let mut out = Vec::new();
    for (li, info) in net.param_infos().iter().enumerate() {
        if info.sparse && info.role == ParamRole::Weight {
            let n = info.len();
            let m = initial_active_count(n, s).max(1);
            let limit = (6.0 / (info.fan_in + info.fan_out) as f64).sqrt();
            let unique = (0..m).map(|_| rng.random_range(-limit..limit)).collect();
            out.push(Param::Hashed(HashedTensor::new(
                info.shape.clone(),
                m,
                cfg.hash_seed,
                li as u64,
                unique,
            )?));
        } else {
            out.push(Param::Dense(dense_init(info, rng)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_matches_recomputed_hash() {
        let t = HashedTensor::new(vec![2, 4], 3, 42, 0, vec![1.0, 2.0, 3.0]).unwrap();
        for i in 0..8u64 {
            let h = splitmix64(42 ^ splitmix64(0) ^ splitmix64(i + 1)) % 3;
            assert_eq!(t.slots()[i as usize], h as usize);
        }
    }

    #[test]
    fn single_slot_shares_everything() {
        let t = HashedTensor::new(vec![3, 2], 1, 7, 1, vec![0.25]).unwrap();
        assert!(t.materialize().data().iter().all(|&v| v == 0.25));
        assert_eq!(t.accumulate_grad(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), vec![21.0]);
    }

    #[test]
    fn identity_mapping_is_dense() {
        let t = HashedTensor::with_mapping(vec![2, 2], vec![0, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.materialize().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.accumulate_grad(&[0.5, 0.1, 0.2, 0.3]), vec![0.5, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(HashedTensor::new(vec![2], 0, 0, 0, vec![]).is_err());
        assert!(HashedTensor::new(vec![2], 3, 0, 0, vec![0.0; 3]).is_err());
    }
}
