//! Sparse reparameterization of a weight tensor: a dense-shaped value buffer
//! filtered by a bitmask of active positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed-length bitset over flat tensor positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    len: usize,
    words: Vec<u64>,
}

impl Mask {
    pub fn empty(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn full(len: usize) -> Self {
        let mut m = Self::empty(len);
        for i in 0..len {
            m.set(i);
        }
        m
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut m = Self::empty(len);
        for &i in indices {
            m.set(i);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set positions in increasing order.
    pub fn ones(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.count_ones());
        for (wi, &w) in self.words.iter().enumerate() {
            let mut bits = w;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(wi * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    /// Unset positions in increasing order.
    pub fn zeros(&self) -> Vec<usize> {
        (0..self.len).filter(|&i| !self.get(i)).collect()
    }

    /// Packed little-endian bytes: bit `i` lives in byte `i / 8` at bit `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len.div_ceil(8));
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(self.len.div_ceil(8));
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Checkpoint(format!(
                "mask of {} bits needs {} bytes, got {}",
                len,
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut m = Self::empty(len);
        for (i, &b) in bytes.iter().enumerate() {
            m.words[i / 8] |= (b as u64) << (8 * (i % 8));
        }
        // bits beyond `len` must be zero
        if len % 64 != 0 {
            let last = m.words.len() - 1;
            if m.words[last] >> (len % 64) != 0 {
                return Err(Error::Checkpoint("mask padding bits set".into()));
            }
        }
        Ok(m)
    }
}

/// Dense-shaped parameter tensor with a bitmask of active positions.
///
/// Invariants: `values[i] == 0.0` wherever the mask is unset, and `active`
/// lists exactly the set positions in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    mask: Mask,
    active: Vec<usize>,
}

impl MaskedTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>, mask: Mask) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n || mask.len() != n {
            return Err(Error::Shape(format!(
                "masked tensor {:?}: {} values, {} mask bits",
                shape,
                values.len(),
                mask.len()
            )));
        }
        let mut t = Self {
            shape,
            values,
            active: mask.ones(),
            mask,
        };
        t.apply_mask();
        Ok(t)
    }

    /// All positions active.
    pub fn full(t: Tensor) -> Self {
        let n = t.len();
        let shape = t.shape().to_vec();
        Self {
            shape,
            values: t.into_data(),
            mask: Mask::full(n),
            active: (0..n).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// `N_l`, the dense size.
    pub fn dense_len(&self) -> usize {
        self.values.len()
    }

    /// `M_l`, the number of active positions.
    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.active.len() as f64 / self.values.len() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn active_indices(&self) -> &[usize] {
        &self.active
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.mask.get(i)
    }

    /// Flat positions not currently active, in increasing order.
    pub fn inactive_indices(&self) -> Vec<usize> {
        self.mask.zeros()
    }

    /// Mutable value buffer alongside the active list. Callers must only
    /// write at active positions.
    pub fn values_mut_with_active(&mut self) -> (&mut [f64], &[usize]) {
        (&mut self.values, &self.active)
    }

    /// Zeroes every inactive position. Idempotent.
    pub fn apply_mask(&mut self) {
        for (i, v) in self.values.iter_mut().enumerate() {
            if !self.mask.get(i) {
                *v = 0.0;
            }
        }
    }

    /// Deactivates the given positions and zeroes them.
    pub fn deactivate(&mut self, positions: &[usize]) {
        if positions.is_empty() {
            return;
        }
        for &i in positions {
            debug_assert!(self.mask.get(i), "position {i} already inactive");
            self.mask.clear(i);
            self.values[i] = 0.0;
        }
        self.active = self.mask.ones();
    }

    /// Activates inactive positions with value exactly 0.0.
    pub fn activate(&mut self, positions: &[usize]) -> Result<()> {
        if positions.is_empty() {
            return Ok(());
        }
        for &i in positions {
            if i >= self.values.len() || self.mask.get(i) {
                return Err(Error::InvalidArgument(format!(
                    "cannot activate position {i}: out of range or already active"
                )));
            }
            self.mask.set(i);
            self.values[i] = 0.0;
        }
        self.active = self.mask.ones();
        Ok(())
    }

    /// Activates positions and assigns values (used when loading init values).
    pub fn set_active_value(&mut self, i: usize, v: f64) {
        debug_assert!(self.mask.get(i));
        self.values[i] = v;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.values.clone()).expect("shape consistent")
    }

    /// Checks the public invariants; used by tests and `verify`.
    pub fn check_invariants(&self) -> Result<()> {
        if self.active != self.mask.ones() {
            return Err(Error::InvalidArgument("active list out of sync with mask".into()));
        }
        for (i, &v) in self.values.iter().enumerate() {
            if !self.mask.get(i) && v != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "inactive position {i} holds {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparsity of one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSparsity {
    pub name: String,
    pub dense: usize,
    pub active: usize,
    pub sparsity: f64,
}

/// Per-tensor and global sparsity over all sparse tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub tensors: Vec<TensorSparsity>,
    pub dense: usize,
    pub active: usize,
    pub global_sparsity: f64,
}

impl SparsityReport {
    pub fn new<'a, I>(tensors: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a MaskedTensor)>,
    {
        let tensors: Vec<TensorSparsity> = tensors
            .into_iter()
            .map(|(name, t)| TensorSparsity {
                name: name.to_string(),
                dense: t.dense_len(),
                active: t.active_count(),
                sparsity: t.sparsity(),
            })
            .collect();
        let dense: usize = tensors.iter().map(|t| t.dense).sum();
        let active: usize = tensors.iter().map(|t| t.active).sum();
        let global_sparsity = if dense == 0 {
            0.0
        } else {
            1.0 - active as f64 / dense as f64
        };
        Self {
            tensors,
            dense,
            active,
            global_sparsity,
        }
    }
}

/// `M_l^(0) = round((1 - s) N_l)`.
pub fn initial_active_count(dense_len: usize, sparsity: f64) -> usize {
    ((1.0 - sparsity) * dense_len as f64).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> MaskedTensor {
        MaskedTensor::new(
            vec![2, 3],
            vec![0.1, 0.5, -0.2, 0.3, 0.0, 0.7],
            Mask::from_indices(6, &[0, 2, 5]),
        )
        .unwrap()
    }

    #[test]
    fn construction_zeroes_inactive_values() {
        let t = sample();
        assert_eq!(t.values(), &[0.1, 0.0, -0.2, 0.0, 0.0, 0.7]);
        assert_eq!(t.active_count(), 3);
        t.check_invariants().unwrap();
    }

    #[test]
    fn apply_mask_is_idempotent() {
        let mut t = sample();
        let before = t.clone();
        t.apply_mask();
        assert_eq!(t, before);
    }

    #[test]
    fn apply_mask_zeroes_stray_value() {
        let mut t = sample();
        t.values[1] = 0.5;
        t.apply_mask();
        assert_eq!(t.values()[1], 0.0);
    }

    #[test]
    fn full_mask_is_identity() {
        let dense = Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let mut t = MaskedTensor::full(dense.clone());
        t.apply_mask();
        assert_eq!(t.to_tensor(), dense);
    }

    #[test]
    fn activate_rejects_active_position() {
        let mut t = sample();
        assert!(t.activate(&[0]).is_err());
        t.activate(&[1]).unwrap();
        assert_eq!(t.values()[1], 0.0);
        assert_eq!(t.active_indices(), &[0, 1, 2, 5]);
    }

    #[test]
    fn initial_counts() {
        assert_eq!(initial_active_count(10, 0.8), 2);
        assert_eq!(initial_active_count(1000, 0.98), 20);
    }

    #[test]
    fn report_global_is_count_weighted() {
        let a = sample();
        let b = MaskedTensor::full(Tensor::zeros(&[4]));
        let r = SparsityReport::new([("a", &a), ("b", &b)]);
        assert_eq!(r.dense, 10);
        assert_eq!(r.active, 7);
        assert!((r.global_sparsity - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mask_bytes_roundtrip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let idx: Vec<usize> = bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
            let m = Mask::from_indices(bits.len(), &idx);
            let back = Mask::from_bytes(bits.len(), &m.to_bytes()).unwrap();
            prop_assert_eq!(back.ones(), idx);
        }
    }
}
