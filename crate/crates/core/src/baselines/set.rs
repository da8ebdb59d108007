//! Sparse evolutionary training: per-tensor magnitude pruning with random
//! regrowth in the same tensor, so every tensor keeps its active count.

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::sample_positions;
use crate::realloc::plan_growth;
use crate::schedule::EpochSchedule;
use crate::sparse::MaskedTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetConfig {
    /// Entries replaced per step, summed over tensors.
    pub prune_count: usize,
    /// Iterations between steps, by epoch.
    pub period_schedule: EpochSchedule<usize>,
}

/// Splits `n_prune` over tensors in proportion to their active counts
/// (largest remainder, ties to the lower index).
pub fn apportion(active: &[usize], n_prune: usize) -> Result<Vec<usize>> {
    let total: usize = active.iter().sum();
    if n_prune > total {
        return Err(Error::InvalidArgument(format!(
            "cannot replace {n_prune} of {total} active entries"
        )));
    }
    Ok(plan_growth(active, active, n_prune)?.grown)
}

/// Removes the `k` smallest-magnitude active entries (ties by position) and
/// activates `k` random zero-valued inactive positions.
pub fn set_tensor_step(t: &mut MaskedTensor, k: usize, rng: &mut ChaCha20Rng) -> Result<Vec<usize>> {
    if k > t.active_count() {
        return Err(Error::InvalidArgument(format!(
            "cannot prune {k} of {} active entries",
            t.active_count()
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let v = t.values();
    let mut order = t.active_indices().to_vec();
    order.sort_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(a.cmp(&b)));
    let mut pruned = order[..k].to_vec();
    pruned.sort_unstable();
    t.deactivate(&pruned);
    let free = t.inactive_indices();
    let picks: Vec<usize> = sample_positions(rng, free.len(), k)
        .into_iter()
        .map(|i| free[i])
        .collect();
    t.activate(&picks)?;
    Ok(pruned)
}

/// One step over all tensors. Returns the per-tensor replacement counts.
pub fn set_step(tensors: &mut [&mut MaskedTensor], n_prune: usize, rng: &mut ChaCha20Rng) -> Result<Vec<usize>> {
    let active: Vec<usize> = tensors.iter().map(|t| t.active_count()).collect();
    let ks = apportion(&active, n_prune)?;
    for (t, &k) in tensors.iter_mut().zip(&ks) {
        set_tensor_step(t, k, rng)?;
    }
    Ok(ks)
}
