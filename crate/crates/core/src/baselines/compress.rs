//! Gradual magnitude pruning of a trained dense model.
//!
//! Pruning events `t = 1..=T` raise the sparsity along the cubic ramp
//! `s_t = s (1 - (1 - t/T)^3)`, each followed by a fine-tuning interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::EpochSchedule;
use crate::sparse::{initial_active_count, MaskedTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionSchedule {
    /// `T`, number of pruning events.
    pub events: usize,
    pub epochs_between: usize,
    pub epochs_post: usize,
    /// Learning rate over the pruning phase, epochs counted from its start.
    pub lr_schedule: EpochSchedule<f64>,
    /// Prune each tensor to the scheduled sparsity instead of globally.
    #[serde(default)]
    pub per_layer: bool,
}

impl CompressionSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.events == 0 || self.epochs_between == 0 {
            return Err(Error::Config("compression needs events >= 1 and epochs_between >= 1".into()));
        }
        self.lr_schedule
            .validate_tiles(self.phase_epochs(), "compression.lr_schedule")
    }

    /// Epochs from the first event to the end of fine-tuning.
    pub fn phase_epochs(&self) -> usize {
        self.events * self.epochs_between + self.epochs_post
    }

    /// Sparsity after event `t` (0 before the first event).
    pub fn sparsity_at(&self, t: usize, target: f64) -> f64 {
        let t = t.min(self.events) as f64;
        let r = 1.0 - t / self.events as f64;
        target * (1.0 - r * r * r)
    }

    /// Event index that fires at the start of pruning-phase epoch `e`
    /// (1-based), if any.
    pub fn event_at_epoch(&self, e: usize) -> Option<usize> {
        if e == 0 || (e - 1) % self.epochs_between != 0 {
            return None;
        }
        let t = (e - 1) / self.epochs_between + 1;
        (t <= self.events).then_some(t)
    }
}

/// Keeps exactly `round((1 - s) N)` entries overall, removing the
/// smallest-magnitude active entries across all tensors (ties by tensor,
/// then position). Returns the number removed.
pub fn prune_global_magnitude(tensors: &mut [&mut MaskedTensor], s: f64) -> Result<usize> {
    let n: usize = tensors.iter().map(|t| t.dense_len()).sum();
    let keep = initial_active_count(n, s);
    let active: usize = tensors.iter().map(|t| t.active_count()).sum();
    if keep > active {
        return Err(Error::InvalidArgument(format!(
            "sparsity {s} needs {keep} active entries, only {active} remain"
        )));
    }
    let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(active);
    for (ti, t) in tensors.iter().enumerate() {
        for &k in t.active_indices() {
            all.push((t.values()[k].abs(), ti, k));
        }
    }
    let remove = active - keep;
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut per: Vec<Vec<usize>> = vec![Vec::new(); tensors.len()];
    for &(_, ti, k) in &all[..remove] {
        per[ti].push(k);
    }
    for (t, mut p) in tensors.iter_mut().zip(per) {
        p.sort_unstable();
        t.deactivate(&p);
    }
    Ok(remove)
}

/// Prunes every tensor separately to `round((1 - s) N_l)` entries.
pub fn prune_per_layer_magnitude(tensors: &mut [&mut MaskedTensor], s: f64) -> Result<usize> {
    let mut removed = 0;
    for t in tensors.iter_mut() {
        removed += prune_global_magnitude(&mut [&mut **t], s)?;
    }
    Ok(removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::Mask;
    use crate::tensor::Tensor;

    fn sched(events: usize) -> CompressionSchedule {
        CompressionSchedule {
            events,
            epochs_between: 2,
            epochs_post: 20,
            lr_schedule: EpochSchedule::new(vec![([1, 20], 0.02), ([21, 30], 0.004), ([31, 40], 0.0008)]),
            per_layer: false,
        }
    }

    #[test]
    fn cubic_ramp_values() {
        let s = sched(20);
        assert_eq!(s.sparsity_at(0, 0.9), 0.0);
        assert!((s.sparsity_at(10, 0.9) - 0.7875).abs() < 1e-12);
        assert_eq!(s.sparsity_at(20, 0.9), 0.9);
        let mut prev = -1.0;
        for t in 0..=20 {
            let v = s.sparsity_at(t, 0.9);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn events_every_other_epoch() {
        let s = sched(10);
        s.validate().unwrap();
        let fired: Vec<usize> = (1..=40).filter_map(|e| s.event_at_epoch(e)).collect();
        assert_eq!(fired, (1..=10).collect::<Vec<_>>());
        assert_eq!(s.event_at_epoch(19), Some(10));
        assert_eq!(s.event_at_epoch(21), None);
    }

    #[test]
    fn global_prune_hits_count() {
        let mut a = MaskedTensor::full(Tensor::from_vec(vec![0.1, -0.5, 0.3, 0.05]));
        let mut b = MaskedTensor::new(vec![3], vec![0.2, 0.0, -0.9], Mask::from_indices(3, &[0, 2])).unwrap();
        let removed = prune_global_magnitude(&mut [&mut a, &mut b], 0.5).unwrap();
        // 7 positions, keep round(3.5) = 4 of 6 active
        assert_eq!(removed, 2);
        assert!(!a.is_active(0) && !a.is_active(3));
        assert_eq!(a.active_count() + b.active_count(), 4);
    }
}
