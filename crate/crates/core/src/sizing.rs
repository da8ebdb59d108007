//! Storage accounting for sparse models.
//!
//! A sparse tensor is stored as one mask bit per dense position plus a
//! 32-bit value per nonzero entry. With `N` dense positions at sparsity `s`
//! (fraction of zeros) that is `(32 (1 - s) + 1) N` bits, the same as a dense
//! model with `((1 - s) + 1/32) N` weights. The thin dense baseline is sized
//! with that count, i.e. `N / 32` weights more than the sparse model keeps.
//!
//! Note: `s` here is always the fraction of zeros. The nonzero fraction
//! `1 - s` is what multiplies the 32 bits per value.

use serde::{Deserialize, Serialize};

/// Bits per stored value in the accounting convention (training itself runs in f64).
pub const VALUE_BITS: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeAccount {
    pub dense_param_count: usize,
    pub sparsity: f64,
    pub nonzero_count: f64,
    pub descriptive_length_bits: f64,
    pub thin_dense_equivalent_count: f64,
}

impl SizeAccount {
    /// Parameter count including tensors that are never sparse (biases,
    /// normalization), as plotted against accuracy.
    pub fn total_with_dense(&self, dense_other: usize) -> f64 {
        self.nonzero_count + dense_other as f64
    }
}

pub fn descriptive_length(dense_param_count: usize, sparsity: f64) -> SizeAccount {
    let n = dense_param_count as f64;
    let kept = 1.0 - sparsity;
    SizeAccount {
        dense_param_count,
        sparsity,
        nonzero_count: kept * n,
        descriptive_length_bits: (VALUE_BITS * kept + 1.0) * n,
        thin_dense_equivalent_count: (kept + 1.0 / VALUE_BITS) * n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_bits_cost_one_weight_per_32_positions() {
        let a = descriptive_length(32, 0.5);
        assert_eq!(a.thin_dense_equivalent_count - a.nonzero_count, 1.0);
        assert_eq!(a.descriptive_length_bits, (32.0 * 0.5 + 1.0) * 32.0);
    }

    #[test]
    fn thin_dense_counts() {
        let a = descriptive_length(1_500_000, 0.9);
        assert!((a.thin_dense_equivalent_count - 196_875.0).abs() < 1e-6);

        let b = descriptive_length(25_600_000, 0.8);
        assert!((b.nonzero_count - 5_120_000.0).abs() < 1e-6);
        assert!((b.thin_dense_equivalent_count - 5_920_000.0).abs() < 1e-6);
    }

    #[test]
    fn dense_model_costs_33_bits_per_weight() {
        let a = descriptive_length(100, 0.0);
        assert_eq!(a.descriptive_length_bits, 3300.0);
    }

    #[test]
    fn higher_sparsity_is_shorter() {
        let lo = descriptive_length(1000, 0.5);
        let hi = descriptive_length(1000, 0.9);
        assert!(hi.descriptive_length_bits < lo.descriptive_length_bits);
    }
}
