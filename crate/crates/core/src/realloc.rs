//! Dynamic parameter reallocation: global threshold pruning, setpoint
//! control of the threshold, and growth distributed across tensors in
//! proportion to their surviving counts.
//!
//! One step, given threshold `H`, target `N_p` and tolerance `δ`:
//!
//! 1. In every tensor remove the active entries with `|w| < H`
//!    (`K_l` removed, `R_l = M_l - K_l` surviving).
//! 2. With `K = Σ K_l`: double `H` if `K < (1-δ) N_p`, halve it if
//!    `K > (1+δ) N_p`. The new threshold applies to the next step.
//! 3. Give tensor `l` about `G_l = round(R_l / Σ R · K)` new zero-valued
//!    entries at uniformly random inactive positions, with rounding and
//!    capacity corrections so that `Σ G_l == K` exactly.
//!
//! With [`Granularity::Kernel3x3`] the same step runs on whole 3x3 kernels:
//! a kernel is pruned when its L1 norm is below `H`, and all counts
//! (`N_p`, `K_l`, `R_l`, `G_l`) are kernel counts.

use std::cmp::Ordering;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::sample_positions;
use crate::schedule::EpochSchedule;
use crate::sparse::MaskedTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Weight,
    Kernel3x3,
}

impl Granularity {
    fn unit(self) -> usize {
        match self {
            Granularity::Weight => 1,
            Granularity::Kernel3x3 => 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReallocConfig {
    /// `N_p`: target number of entries (or kernels) pruned per step.
    pub prune_target: usize,
    /// `δ`: fractional tolerance around `N_p`.
    pub tolerance: f64,
    /// `H^(0)`.
    pub initial_threshold: f64,
    /// Iterations between steps, by epoch.
    pub period_schedule: EpochSchedule<usize>,
    #[serde(default)]
    pub granularity: Granularity,
    /// Masks are frozen for epochs after this one. Training continues.
    #[serde(default)]
    pub stop_epoch: Option<usize>,
}

impl ReallocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prune_target < 1 {
            return Err(Error::Config("prune_target must be >= 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if !(self.initial_threshold > 0.0) {
            return Err(Error::Config("initial_threshold must be > 0".into()));
        }
        if self.period_schedule.ranges.iter().any(|r| r.value < 1) {
            return Err(Error::Config("reallocation period must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether steps run during `epoch` (1-based).
    pub fn active_in(&self, epoch: usize) -> bool {
        self.stop_epoch.is_none_or(|stop| epoch <= stop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReallocState {
    /// Current pruning threshold `H`.
    pub threshold: f64,
    /// Number of completed steps.
    pub step: u64,
}

impl ReallocState {
    pub fn new(cfg: &ReallocConfig) -> Self {
        Self {
            threshold: cfg.initial_threshold,
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorStep {
    pub active_before: usize,
    /// `K_l`.
    pub pruned: usize,
    /// `R_l`.
    pub surviving: usize,
    /// `G_l`.
    pub grown: usize,
    pub active_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub tensors: Vec<TensorStep>,
    pub pruned: usize,
    pub surviving: usize,
    pub grown: usize,
    pub threshold_before: f64,
    pub threshold_after: f64,
    /// Growth moved to other tensors because a tensor ran out of free slots.
    pub overflow_redistributed: usize,
    /// Tensors left with no active entries.
    pub dead_tensors: Vec<usize>,
}

/// Removes every active entry with `|w| < h` (strict). Returns the removed
/// flat positions in increasing order.
pub fn prune_by_threshold(t: &mut MaskedTensor, h: f64) -> Vec<usize> {
    let pruned: Vec<usize> = t
        .active_indices()
        .iter()
        .copied()
        .filter(|&k| t.values()[k].abs() < h)
        .collect();
    t.deactivate(&pruned);
    pruned
}

fn check_kernel_tensor(t: &MaskedTensor) -> Result<()> {
    let s = t.shape();
    if s.len() != 4 || s[2] != 3 || s[3] != 3 {
        return Err(Error::InvalidArgument(format!(
            "kernel granularity needs 4-D 3x3 conv weights, got shape {s:?}"
        )));
    }
    Ok(())
}

fn active_units(t: &MaskedTensor, unit: usize) -> Vec<usize> {
    if unit == 1 {
        return t.active_indices().to_vec();
    }
    (0..t.dense_len() / unit)
        .filter(|&g| t.is_active(g * unit))
        .collect()
}

fn inactive_units(t: &MaskedTensor, unit: usize) -> Vec<usize> {
    if unit == 1 {
        return t.inactive_indices();
    }
    (0..t.dense_len() / unit)
        .filter(|&g| !t.is_active(g * unit))
        .collect()
}

fn expand_units(units: &[usize], unit: usize) -> Vec<usize> {
    if unit == 1 {
        return units.to_vec();
    }
    units.iter().flat_map(|&g| g * unit..(g + 1) * unit).collect()
}

/// Removes whole 3x3 kernels whose L1 norm is below `h`. Returns the removed
/// kernel indices (kernel `g` covers flat positions `9g..9g+9`).
pub fn prune_kernels_by_threshold(t: &mut MaskedTensor, h: f64) -> Result<Vec<usize>> {
    check_kernel_tensor(t)?;
    let pruned: Vec<usize> = active_units(t, 9)
        .into_iter()
        .filter(|&g| t.values()[g * 9..g * 9 + 9].iter().map(|v| v.abs()).sum::<f64>() < h)
        .collect();
    t.deactivate(&expand_units(&pruned, 9));
    Ok(pruned)
}

/// Setpoint rule for the next threshold from the count just pruned.
pub fn adjust_threshold(h: f64, pruned: usize, target: usize, tolerance: f64) -> f64 {
    let k = pruned as f64;
    let n_p = target as f64;
    if k < (1.0 - tolerance) * n_p {
        2.0 * h
    } else if k > (1.0 + tolerance) * n_p {
        0.5 * h
    } else {
        h
    }
}

/// Per-tensor growth counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthPlan {
    pub grown: Vec<usize>,
    pub overflow_redistributed: usize,
}

/// `num / den` rounded half up, with the signed rounding residual
/// `num - den * rounded` (same denominator for every tensor).
fn round_ratio(num: u128, den: u128) -> (usize, i128) {
    let q = num / den;
    let r = num % den;
    if 2 * r >= den {
        ((q + 1) as usize, r as i128 - den as i128)
    } else {
        (q as usize, r as i128)
    }
}

/// Splits `k` new entries across tensors in proportion to `weights`, never
/// exceeding `capacity`.
///
/// Counts are rounded to nearest, then fixed to sum to `k` by moving single
/// units by largest residual (ties go to the lower tensor index). Counts
/// above a tensor's capacity are clamped and the excess is spread over the
/// remaining free capacity in proportion to it, again by largest remainder.
pub fn plan_growth(weights: &[usize], capacity: &[usize], k: usize) -> Result<GrowthPlan> {
    let n = weights.len();
    if k == 0 {
        return Ok(GrowthPlan {
            grown: vec![0; n],
            overflow_redistributed: 0,
        });
    }
    let total_cap: usize = capacity.iter().sum();
    if total_cap < k {
        return Err(Error::Capacity(format!(
            "{k} entries to grow but only {total_cap} free positions"
        )));
    }
    let total_w: usize = weights.iter().sum();
    // every tensor pruned to empty: fall back to free capacity
    let weights: &[usize] = if total_w == 0 { capacity } else { weights };
    let den = weights.iter().sum::<usize>() as u128;

    let mut grown = Vec::with_capacity(n);
    let mut residual = Vec::with_capacity(n);
    for &w in weights {
        let (g, r) = round_ratio(w as u128 * k as u128, den);
        grown.push(g);
        residual.push(r);
    }
    let sum: usize = grown.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    match sum.cmp(&k) {
        Ordering::Less => {
            order.sort_by(|&a, &b| residual[b].cmp(&residual[a]).then(a.cmp(&b)));
            for &i in order.iter().take(k - sum) {
                grown[i] += 1;
            }
        }
        Ordering::Greater => {
            order.sort_by(|&a, &b| residual[a].cmp(&residual[b]).then(a.cmp(&b)));
            let mut left = sum - k;
            for &i in &order {
                if left == 0 {
                    break;
                }
                if grown[i] > 0 {
                    grown[i] -= 1;
                    left -= 1;
                }
            }
        }
        Ordering::Equal => {}
    }

    let mut excess = 0;
    for (g, &c) in grown.iter_mut().zip(capacity) {
        if *g > c {
            excess += *g - c;
            *g = c;
        }
    }
    let overflow_redistributed = excess;
    if excess > 0 {
        let room: Vec<usize> = grown.iter().zip(capacity).map(|(g, c)| c - g).collect();
        let room_total: usize = room.iter().sum();
        let mut add: Vec<usize> = Vec::with_capacity(n);
        let mut rem: Vec<u128> = Vec::with_capacity(n);
        for &r in &room {
            let num = excess as u128 * r as u128;
            add.push((num / room_total as u128) as usize);
            rem.push(num % room_total as u128);
        }
        let mut left = excess - add.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(a.cmp(&b)));
        for &i in &order {
            if left == 0 {
                break;
            }
            if add[i] < room[i] {
                add[i] += 1;
                left -= 1;
            }
        }
        for (g, a) in grown.iter_mut().zip(&add) {
            *g += a;
        }
    }
    debug_assert_eq!(grown.iter().sum::<usize>(), k);
    Ok(GrowthPlan {
        grown,
        overflow_redistributed,
    })
}

fn place(tensors: &mut [&mut MaskedTensor], grown: &[usize], unit: usize, rng: &mut ChaCha20Rng) -> Result<()> {
    for (t, &g) in tensors.iter_mut().zip(grown) {
        if g == 0 {
            continue;
        }
        let free = inactive_units(t, unit);
        let picks = sample_positions(rng, free.len(), g);
        let units: Vec<usize> = picks.into_iter().map(|i| free[i]).collect();
        t.activate(&expand_units(&units, unit))?;
    }
    Ok(())
}

/// Grows `k` zero-valued entries across `tensors` in proportion to
/// `surviving`, at uniformly random inactive positions.
pub fn grow(
    tensors: &mut [&mut MaskedTensor],
    surviving: &[usize],
    k: usize,
    rng: &mut ChaCha20Rng,
) -> Result<GrowthPlan> {
    let capacity: Vec<usize> = tensors
        .iter()
        .map(|t| t.dense_len() - t.active_count())
        .collect();
    let plan = plan_growth(surviving, &capacity, k)?;
    place(tensors, &plan.grown, 1, rng)?;
    Ok(plan)
}

/// One prune / adjust / grow step over all sparse tensors.
pub fn realloc_step(
    tensors: &mut [&mut MaskedTensor],
    state: &mut ReallocState,
    cfg: &ReallocConfig,
    rng: &mut ChaCha20Rng,
) -> Result<StepReport> {
    let unit = cfg.granularity.unit();
    if cfg.granularity == Granularity::Kernel3x3 {
        for t in tensors.iter() {
            check_kernel_tensor(t)?;
        }
    }
    let h = state.threshold;
    let mut steps = Vec::with_capacity(tensors.len());
    for t in tensors.iter_mut() {
        let before = t.active_count() / unit;
        let pruned = if unit == 1 {
            prune_by_threshold(t, h).len()
        } else {
            prune_kernels_by_threshold(t, h)?.len()
        };
        steps.push(TensorStep {
            active_before: before,
            pruned,
            surviving: before - pruned,
            grown: 0,
            active_after: 0,
        });
    }
    let pruned: usize = steps.iter().map(|s| s.pruned).sum();
    let surviving: Vec<usize> = steps.iter().map(|s| s.surviving).collect();
    let h_next = adjust_threshold(h, pruned, cfg.prune_target, cfg.tolerance);

    let capacity: Vec<usize> = tensors
        .iter()
        .zip(&surviving)
        .map(|(t, &r)| t.dense_len() / unit - r)
        .collect();
    let plan = plan_growth(&surviving, &capacity, pruned)?;
    place(tensors, &plan.grown, unit, rng)?;

    let mut dead = Vec::new();
    for (i, (s, t)) in steps.iter_mut().zip(tensors.iter()).enumerate() {
        s.grown = plan.grown[i];
        s.active_after = t.active_count() / unit;
        if s.active_after == 0 {
            dead.push(i);
        }
    }
    if !dead.is_empty() {
        log::warn!("reallocation left tensors {dead:?} with no active entries; they receive no further growth");
    }
    state.threshold = h_next;
    state.step += 1;
    Ok(StepReport {
        step: state.step,
        pruned,
        surviving: surviving.iter().sum(),
        grown: plan.grown.iter().sum(),
        tensors: steps,
        threshold_before: h,
        threshold_after: h_next,
        overflow_redistributed: plan.overflow_redistributed,
        dead_tensors: dead,
    })
}

/// [`realloc_step`] at kernel granularity regardless of `cfg.granularity`.
pub fn realloc_step_structured(
    tensors: &mut [&mut MaskedTensor],
    state: &mut ReallocState,
    cfg: &ReallocConfig,
    rng: &mut ChaCha20Rng,
) -> Result<StepReport> {
    let cfg = ReallocConfig {
        granularity: Granularity::Kernel3x3,
        ..cfg.clone()
    };
    realloc_step(tensors, state, &cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::sparse::Mask;

    fn tensor(values: &[f64]) -> MaskedTensor {
        let n = values.len();
        let active: Vec<usize> = (0..n).filter(|&i| values[i] != 0.0).collect();
        MaskedTensor::new(vec![n], values.to_vec(), Mask::from_indices(n, &active)).unwrap()
    }

    fn cfg(n_p: usize) -> ReallocConfig {
        ReallocConfig {
            prune_target: n_p,
            tolerance: 0.1,
            initial_threshold: 0.001,
            period_schedule: EpochSchedule::constant(1, 100),
            granularity: Granularity::Weight,
            stop_epoch: None,
        }
    }

    #[test]
    fn prune_strictly_below_threshold() {
        let mut t = tensor(&[0.5, -0.001, 0.02]);
        assert_eq!(prune_by_threshold(&mut t, 0.01), vec![1]);
        assert_eq!(t.active_count(), 2);
        assert_eq!(t.values()[1], 0.0);
        // boundary weight survives
        let mut t = tensor(&[0.01, 0.5]);
        assert!(prune_by_threshold(&mut t, 0.01).is_empty());
    }

    #[test]
    fn prune_nothing_or_everything() {
        let mut t = tensor(&[0.5, -0.3, 0.2]);
        let before = t.clone();
        assert!(prune_by_threshold(&mut t, 0.1).is_empty());
        assert_eq!(t, before);
        assert_eq!(prune_by_threshold(&mut t, 1.0).len(), 3);
        assert_eq!(t.active_count(), 0);
    }

    #[test]
    fn threshold_setpoint_rule() {
        assert_eq!(adjust_threshold(0.001, 500, 600, 0.1), 0.002);
        assert_eq!(adjust_threshold(0.001, 600, 600, 0.1), 0.001);
        assert_eq!(adjust_threshold(0.001, 700, 600, 0.1), 0.0005);
        // band edges are inside the band
        assert_eq!(adjust_threshold(0.001, 540, 600, 0.1), 0.001);
        assert_eq!(adjust_threshold(0.001, 660, 600, 0.1), 0.001);
    }

    #[test]
    fn growth_is_proportional() {
        let plan = plan_growth(&[30, 10], &[100, 100], 8).unwrap();
        assert_eq!(plan.grown, vec![6, 2]);
        assert_eq!(plan_growth(&[5], &[10], 3).unwrap().grown, vec![3]);
        assert_eq!(plan_growth(&[5, 7], &[10, 10], 0).unwrap().grown, vec![0, 0]);
    }

    #[test]
    fn rounding_residual_is_fixed_exactly() {
        // three equal shares of 1 all round to 0
        let plan = plan_growth(&[1, 1, 1], &[9, 9, 9], 1).unwrap();
        assert_eq!(plan.grown, vec![1, 0, 0]);
        // 2.5, 2.5, 2.5, 2.5 -> all round up to 3; remove the excess from lowest index
        let plan = plan_growth(&[1, 1, 1, 1], &[9, 9, 9, 9], 10).unwrap();
        assert_eq!(plan.grown.iter().sum::<usize>(), 10);
        assert_eq!(plan.grown, vec![2, 2, 3, 3]);
    }

    #[test]
    fn overflow_moves_to_other_tensors() {
        let plan = plan_growth(&[90, 10], &[2, 50], 20).unwrap();
        assert_eq!(plan.grown, vec![2, 18]);
        assert_eq!(plan.overflow_redistributed, 16);
    }

    #[test]
    fn capacity_shortfall_is_an_error() {
        assert!(matches!(plan_growth(&[1, 1], &[1, 1], 3), Err(Error::Capacity(_))));
    }

    #[test]
    fn tensor_can_die_and_others_gain() {
        // tensor 0 is entirely subthreshold
        let mut a = tensor(&[0.0001, -0.0002, 0.0003, 0.0, 0.0, 0.0]);
        let mut b = tensor(&[0.5, 0.0, 0.7, 0.0, 0.0, 0.0, 0.0, 0.9]);
        let mut rng = stream_rng(1, Stream::Realloc);
        let mut state = ReallocState { threshold: 0.01, step: 0 };
        let report = {
            let mut ts = [&mut a, &mut b];
            realloc_step(&mut ts, &mut state, &cfg(3), &mut rng).unwrap()
        };
        assert_eq!(report.pruned, 3);
        assert_eq!(report.tensors[1].grown, 3);
        assert_eq!(a.active_count(), 0);
        assert_eq!(b.active_count(), 6);
        assert_eq!(report.dead_tensors, vec![0]);
    }

    #[test]
    fn no_prune_means_no_change() {
        let mut a = tensor(&[0.5, 0.0, -0.4]);
        let before = a.clone();
        let mut rng = stream_rng(1, Stream::Realloc);
        let mut state = ReallocState { threshold: 0.001, step: 0 };
        let r = realloc_step(&mut [&mut a], &mut state, &cfg(1), &mut rng).unwrap();
        assert_eq!((r.pruned, r.grown), (0, 0));
        assert_eq!(a, before);
        // too few pruned: threshold doubles
        assert_eq!(state.threshold, 0.002);
    }

    #[test]
    fn stop_epoch_window() {
        let mut c = cfg(1);
        assert!(c.active_in(1000));
        c.stop_epoch = Some(10);
        assert!(c.active_in(10));
        assert!(!c.active_in(11));
        c.stop_epoch = Some(0);
        assert!(!c.active_in(1));
    }

    fn conv(values: Vec<f64>, active_kernels: &[usize], kernels: usize) -> MaskedTensor {
        let idx: Vec<usize> = active_kernels.iter().flat_map(|&g| g * 9..g * 9 + 9).collect();
        MaskedTensor::new(vec![kernels, 1, 3, 3], values, Mask::from_indices(kernels * 9, &idx)).unwrap()
    }

    #[test]
    fn kernel_pruned_by_l1() {
        let mut vals = vec![0.5; 27];
        for v in &mut vals[9..18] {
            *v = -0.001;
        }
        let mut t = conv(vals, &[0, 1, 2], 3);
        assert_eq!(prune_kernels_by_threshold(&mut t, 0.01).unwrap(), vec![1]);
        assert_eq!(t.active_count(), 18);
    }

    #[test]
    fn kernel_step_zero_threshold_is_noop_and_conserves() {
        let mut t = conv(vec![0.3; 36], &[0, 2], 4);
        let before = t.clone();
        let mut rng = stream_rng(1, Stream::Realloc);
        let mut state = ReallocState { threshold: 0.0, step: 0 };
        let r = realloc_step_structured(&mut [&mut t], &mut state, &cfg(1), &mut rng).unwrap();
        assert_eq!((r.pruned, r.grown), (0, 0));
        assert_eq!(t, before);

        let mut vals = vec![0.3; 36];
        for v in &mut vals[0..9] {
            *v = 0.0001;
        }
        let mut t = conv(vals, &[0, 2], 4);
        let mut state = ReallocState { threshold: 0.01, step: 0 };
        let r = realloc_step_structured(&mut [&mut t], &mut state, &cfg(1), &mut rng).unwrap();
        assert_eq!((r.pruned, r.grown), (1, 1));
        assert_eq!(t.active_count(), 18);
        for g in 0..4 {
            let on = (0..9).filter(|k| t.is_active(g * 9 + k)).count();
            assert!(on == 0 || on == 9);
        }
    }

    #[test]
    fn kernel_mode_rejects_linear_weights() {
        let mut a = tensor(&[0.5, 0.1]);
        let mut rng = stream_rng(1, Stream::Realloc);
        let mut state = ReallocState { threshold: 0.01, step: 0 };
        assert!(realloc_step_structured(&mut [&mut a], &mut state, &cfg(1), &mut rng).is_err());
    }
}
