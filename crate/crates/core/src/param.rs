//! Trainable tensors of a network and their initialization.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::baselines::hashed::HashedTensor;
use crate::error::{Error, Result};
use crate::nn::{NetworkSpec, ParamInfo, ParamRole};
use crate::rng::{stream_rng, Stream};
use crate::sparse::{initial_active_count, Mask, MaskedTensor, SparsityReport};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Param {
    Dense(Tensor),
    Sparse(MaskedTensor),
    Hashed(HashedTensor),
}

impl Param {
    pub fn shape(&self) -> &[usize] {
        match self {
            Param::Dense(t) => t.shape(),
            Param::Sparse(t) => t.shape(),
            Param::Hashed(t) => t.shape(),
        }
    }

    pub fn dense_len(&self) -> usize {
        self.shape().iter().product()
    }

    /// Free (trainable) scalar count.
    pub fn free_count(&self) -> usize {
        match self {
            Param::Dense(t) => t.len(),
            Param::Sparse(t) => t.active_count(),
            Param::Hashed(t) => t.unique_count(),
        }
    }

    pub fn as_sparse(&self) -> Option<&MaskedTensor> {
        match self {
            Param::Sparse(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_sparse_mut(&mut self) -> Option<&mut MaskedTensor> {
        match self {
            Param::Sparse(t) => Some(t),
            _ => None,
        }
    }

    /// Dense view of the effective weight.
    pub fn to_dense(&self) -> Tensor {
        match self {
            Param::Dense(t) => t.clone(),
            Param::Sparse(t) => t.to_tensor(),
            Param::Hashed(t) => t.materialize(),
        }
    }
}

/// Glorot-uniform draws for a weight, constants for biases and normalization.
pub fn dense_init(info: &ParamInfo, rng: &mut ChaCha20Rng) -> Tensor {
    match info.role {
        ParamRole::Weight => {
            let limit = (6.0 / (info.fan_in + info.fan_out) as f64).sqrt();
            let data = (0..info.len())
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            Tensor::new(info.shape.clone(), data).expect("shape from info")
        }
        ParamRole::Bias | ParamRole::BnShift => Tensor::zeros(&info.shape),
        ParamRole::BnScale => Tensor::filled(&info.shape, 1.0),
    }
}

/// Uniformly samples `count` of `n` positions without replacement.
pub fn sample_positions(rng: &mut ChaCha20Rng, n: usize, count: usize) -> Vec<usize> {
    let mut v = index::sample(rng, n, count).into_vec();
    v.sort_unstable();
    v
}

/// Result of initializing a network: the parameters and the dense values
/// drawn before masking (kept for ticket replays).
#[derive(Debug, Clone)]
pub struct Initialized {
    pub params: Vec<Param>,
    pub dense_init: Vec<Tensor>,
}

/// How sparse tensors sample their initial positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitGranularity {
    Weight,
    /// Whole 3x3 kernels of 4-D conv weights.
    Kernel3x3,
}

/// Initializes every tensor of `net`. Tensors flagged sparse are masked at
/// `sparsity` when it is given and kept dense otherwise.
pub fn init_params(
    net: &NetworkSpec,
    sparsity: Option<f64>,
    granularity: InitGranularity,
    rng: &mut ChaCha20Rng,
) -> Result<Initialized> {
    if let Some(s) = sparsity {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "global sparsity must lie in (0, 1), got {s}"
            )));
        }
    }
    net.shapes()?;
    let mut params = Vec::new();
    let mut snapshot = Vec::new();
    for info in net.param_infos() {
        let dense = dense_init(&info, rng);
        let param = match (info.sparse, sparsity) {
            (true, Some(s)) => {
                let mask = initial_mask(&info, s, granularity, rng)?;
                Param::Sparse(MaskedTensor::new(
                    info.shape.clone(),
                    dense.data().to_vec(),
                    mask,
                )?)
            }
            _ => Param::Dense(dense.clone()),
        };
        params.push(param);
        snapshot.push(dense);
    }
    Ok(Initialized {
        params,
        dense_init: snapshot,
    })
}

fn initial_mask(
    info: &ParamInfo,
    s: f64,
    granularity: InitGranularity,
    rng: &mut ChaCha20Rng,
) -> Result<Mask> {
    let n = info.len();
    match granularity {
        InitGranularity::Weight => {
            let m = initial_active_count(n, s);
            if m == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{} would have no active weights at sparsity {s}",
                    info.name
                )));
            }
            Ok(Mask::from_indices(n, &sample_positions(rng, n, m)))
        }
        InitGranularity::Kernel3x3 => {
            if info.shape.len() != 4 || info.shape[2..] != [3, 3] {
                return Err(Error::InvalidArgument(format!(
                    "{} is not a 3x3 conv weight",
                    info.name
                )));
            }
            let groups = n / 9;
            let m = initial_active_count(groups, s);
            if m == 0 {
                return Err(Error::InvalidArgument(format!(
                    "{} would have no active kernels at sparsity {s}",
                    info.name
                )));
            }
            let mut idx = Vec::with_capacity(m * 9);
            for g in sample_positions(rng, groups, m) {
                idx.extend(g * 9..g * 9 + 9);
            }
            Ok(Mask::from_indices(n, &idx))
        }
    }
}

/// Sparse tensors of `net` at global sparsity `s`, drawn from the init stream
/// of `seed`.
pub fn init_sparse(net: &NetworkSpec, s: f64, seed: u64) -> Result<Vec<MaskedTensor>> {
    let mut rng = stream_rng(seed, Stream::Init);
    let init = init_params(net, Some(s), InitGranularity::Weight, &mut rng)?;
    Ok(init
        .params
        .into_iter()
        .filter_map(|p| match p {
            Param::Sparse(t) => Some(t),
            _ => None,
        })
        .collect())
}

/// Sparsity report over the sparse tensors of a parameter list.
pub fn sparsity_report(net: &NetworkSpec, params: &[Param]) -> SparsityReport {
    let infos = net.param_infos();
    SparsityReport::new(
        infos
            .iter()
            .zip(params)
            .filter_map(|(info, p)| p.as_sparse().map(|t| (info.name.as_str(), t))),
    )
}

/// Mutable references to all sparse tensors, in network order.
pub fn sparse_tensors_mut(params: &mut [Param]) -> Vec<&mut MaskedTensor> {
    params.iter_mut().filter_map(Param::as_sparse_mut).collect()
}

/// Trainable scalars in sparse tensors plus every other tensor.
pub fn total_free_params(params: &[Param]) -> usize {
    params.iter().map(Param::free_count).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_at_09_keeps_rounded_counts() {
        let net = NetworkSpec::lenet_300_100();
        let ts = init_sparse(&net, 0.9, 1).unwrap();
        let counts: Vec<usize> = ts.iter().map(MaskedTensor::active_count).collect();
        assert_eq!(counts, vec![23_520, 3_000, 100]);
        assert_eq!(counts.iter().sum::<usize>(), 26_620);
        let total: usize = ts.iter().map(MaskedTensor::dense_len).sum();
        let s = 1.0 - 26_620.0 / total as f64;
        assert!((s - 0.9).abs() <= 1.0 / total as f64);
    }

    #[test]
    fn classifier_at_098_keeps_20() {
        let net = NetworkSpec::lenet_300_100();
        let ts = init_sparse(&net, 0.98, 2).unwrap();
        assert_eq!(ts[2].active_count(), 20);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let net = NetworkSpec::mlp("t", 30, &[20], 5, true);
        assert_eq!(init_sparse(&net, 0.7, 9).unwrap(), init_sparse(&net, 0.7, 9).unwrap());
        assert_ne!(init_sparse(&net, 0.7, 9).unwrap(), init_sparse(&net, 0.7, 10).unwrap());
    }

    #[test]
    fn rejects_bad_sparsity() {
        let net = NetworkSpec::mlp("t", 4, &[], 2, true);
        assert!(init_sparse(&net, 0.0, 1).is_err());
        assert!(init_sparse(&net, 1.0, 1).is_err());
        // 8 weights at 0.95 rounds to zero active weights
        assert!(init_sparse(&net, 0.95, 1).is_err());
    }

    #[test]
    fn inactive_values_are_zero_after_init() {
        let net = NetworkSpec::mlp("t", 50, &[40], 10, true);
        for t in init_sparse(&net, 0.8, 3).unwrap() {
            t.check_invariants().unwrap();
        }
    }

    #[test]
    fn kernel_init_is_group_consistent() {
        let net = NetworkSpec::small_cnn(1, 8, 4, 2);
        let mut rng = stream_rng(5, Stream::Init);
        let init = init_params(&net, Some(0.5), InitGranularity::Kernel3x3, &mut rng).unwrap();
        for p in &init.params {
            if let Param::Sparse(t) = p {
                for g in 0..t.dense_len() / 9 {
                    let on = (0..9).filter(|k| t.is_active(g * 9 + k)).count();
                    assert!(on == 0 || on == 9);
                }
                assert_eq!(t.active_count(), 9 * ((t.dense_len() / 9) as f64 * 0.5).round() as usize);
            }
        }
    }
}
