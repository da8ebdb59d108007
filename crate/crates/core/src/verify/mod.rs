//! Self-checks of the reallocation machinery and the gradients, runnable
//! from tests and from the command line.

pub mod gradcheck;
pub mod oracle;

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::{forward, BnState, Mode, NetworkSpec};
use crate::param::{init_params, InitGranularity, Param};
use crate::realloc::{realloc_step, ReallocConfig, ReallocState};
use crate::rng::{stream_rng, Stream};
use crate::schedule::EpochSchedule;
use crate::sparse::{Mask, MaskedTensor};
use crate::tensor::Tensor;

use gradcheck::CheckKind;
use oracle::{oracle_step, OracleTensor};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {} ({:.2}s)", self.name, self.detail, self.seconds)
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> Result<CheckResult> {
    let t0 = Instant::now();
    let (passed, detail) = f()?;
    Ok(CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Config with only the fields a single step reads filled in.
pub fn step_config(prune_target: usize, tolerance: f64, initial_threshold: f64) -> ReallocConfig {
    ReallocConfig {
        prune_target,
        tolerance,
        initial_threshold,
        period_schedule: EpochSchedule::constant(1, 1),
        granularity: Default::default(),
        stop_epoch: None,
    }
}

/// A random oracle instance: up to `max_tensors` tensors of up to
/// `max_len` entries, with a threshold, target and tolerance.
#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub tensors: Vec<OracleTensor>,
    pub threshold: f64,
    pub target: usize,
    pub tolerance: f64,
}

pub fn random_instance(rng: &mut ChaCha20Rng, max_tensors: usize, max_len: usize) -> OracleInstance {
    let nt = rng.random_range(1..=max_tensors);
    let tensors = (0..nt)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            let density = rng.random_range(0.0..=1.0);
            let mut values = vec![0.0; n];
            let mut mask = vec![false; n];
            for i in 0..n {
                if rng.random_bool(density) {
                    mask[i] = true;
                    // occasional exact ties with the threshold grid
                    values[i] = match rng.random_range(0..10) {
                        0 => 0.0,
                        1 => 0.125,
                        _ => rng.random_range(-1.0..1.0),
                    };
                }
            }
            OracleTensor { values, mask }
        })
        .collect();
    OracleInstance {
        tensors,
        threshold: [0.01, 0.125, 0.25, 0.5, 1.0][rng.random_range(0..5)],
        target: rng.random_range(1..=10),
        tolerance: [0.05, 0.1, 0.25, 0.5][rng.random_range(0..4)],
    }
}

fn to_masked(t: &OracleTensor) -> MaskedTensor {
    let idx: Vec<usize> = (0..t.mask.len()).filter(|&i| t.mask[i]).collect();
    MaskedTensor::new(vec![t.values.len()], t.values.clone(), Mask::from_indices(t.mask.len(), &idx))
        .expect("consistent lengths")
}

/// Runs one instance through both implementations with identical rng
/// states. Returns a description of the first difference, if any.
pub fn compare_with_oracle(inst: &OracleInstance, rng_seed: u64) -> Result<Option<String>> {
    let mut rng_a = stream_rng(rng_seed, Stream::Realloc);
    let mut rng_b = rng_a.clone();
    let reference = oracle_step(&inst.tensors, inst.threshold, inst.target, inst.tolerance, &mut rng_a);

    let mut owned: Vec<MaskedTensor> = inst.tensors.iter().map(to_masked).collect();
    let mut refs: Vec<&mut MaskedTensor> = owned.iter_mut().collect();
    let cfg = step_config(inst.target, inst.tolerance, inst.threshold);
    let mut state = ReallocState::new(&cfg);
    let report = realloc_step(&mut refs, &mut state, &cfg, &mut rng_b)?;

    if report.threshold_after.to_bits() != reference.threshold_next.to_bits() {
        return Ok(Some(format!(
            "threshold {} vs {}",
            report.threshold_after, reference.threshold_next
        )));
    }
    for (l, (got, exp)) in owned.iter().zip(&reference.tensors).enumerate() {
        let ts = &report.tensors[l];
        if ts.pruned != reference.pruned[l] || ts.grown != reference.grown[l] {
            return Ok(Some(format!(
                "tensor {l}: K {} vs {}, G {} vs {}",
                ts.pruned, reference.pruned[l], ts.grown, reference.grown[l]
            )));
        }
        let mask: Vec<bool> = (0..got.dense_len()).map(|i| got.is_active(i)).collect();
        if mask != exp.mask {
            return Ok(Some(format!("tensor {l}: masks differ")));
        }
        if got.values().iter().zip(&exp.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Ok(Some(format!("tensor {l}: values differ")));
        }
    }
    Ok(None)
}

pub fn check_oracle(instances: usize, seed: u64) -> Result<CheckResult> {
    timed("oracle_equivalence", || {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut mismatches = Vec::new();
        for i in 0..instances {
            let inst = random_instance(&mut rng, 3, 20);
            if let Some(d) = compare_with_oracle(&inst, seed.wrapping_add(i as u64))? {
                mismatches.push(format!("#{i}: {d}"));
            }
        }
        let detail = if mismatches.is_empty() {
            format!("{instances} instances identical")
        } else {
            format!("{} of {instances} differ; first {}", mismatches.len(), mismatches[0])
        };
        Ok((mismatches.is_empty(), detail))
    })
}

/// Sparse tensors of a random MLP or CNN.
fn random_network_tensors(rng: &mut ChaCha20Rng) -> Result<Vec<MaskedTensor>> {
    let net = if rng.random_bool(0.5) {
        let hidden: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(4..40)).collect();
        NetworkSpec::mlp("random", rng.random_range(4..40), &hidden, rng.random_range(2..10), true)
    } else {
        NetworkSpec::small_cnn(rng.random_range(1..3), 8, rng.random_range(2..6), rng.random_range(2..5))
    };
    let s = rng.random_range(0.5..0.95);
    let init = init_params(&net, Some(s), InitGranularity::Weight, rng)?;
    Ok(init.params.into_iter().filter_map(|p| match p {
        Param::Sparse(t) => Some(t),
        _ => None,
    }).collect())
}

/// Random drift of the active values, standing in for training updates.
fn perturb(t: &mut MaskedTensor, scale: f64, rng: &mut ChaCha20Rng) {
    let active = t.active_indices().to_vec();
    for i in active {
        let v = t.values()[i] + rng.random_range(-scale..scale);
        t.set_active_value(i, v);
    }
}

pub fn check_conservation(steps: usize, seed: u64) -> Result<CheckResult> {
    timed("conservation", || {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut realloc_rng = stream_rng(seed, Stream::Realloc);
        let mut failures = Vec::new();
        let mut done = 0;
        let mut total_pruned = 0;
        while done < steps {
            let mut ts = random_network_tensors(&mut rng)?;
            let m0: usize = ts.iter().map(MaskedTensor::active_count).sum();
            let target = (m0 / 20).max(1);
            let cfg = step_config(target, 0.1, 0.01);
            let mut state = ReallocState::new(&cfg);
            for _ in 0..50.min(steps - done) {
                for t in ts.iter_mut() {
                    perturb(t, 0.02, &mut rng);
                }
                let mut refs: Vec<&mut MaskedTensor> = ts.iter_mut().collect();
                let report = realloc_step(&mut refs, &mut state, &cfg, &mut realloc_rng)?;
                total_pruned += report.pruned;
                let m: usize = ts.iter().map(MaskedTensor::active_count).sum();
                if m != m0 {
                    failures.push(format!("step {done}: active {m} != {m0}"));
                }
                for t in &ts {
                    if let Err(e) = t.check_invariants() {
                        failures.push(format!("step {done}: {e}"));
                    }
                }
                done += 1;
            }
        }
        let detail = if failures.is_empty() {
            format!("{steps} steps, {total_pruned} entries moved, count and zeros preserved")
        } else {
            format!("{} violations; first {}", failures.len(), failures[0])
        };
        Ok((failures.is_empty(), detail))
    })
}

/// Trace of the setpoint experiment.
#[derive(Debug, Clone)]
pub struct SetpointTrace {
    pub pruned: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// First 1-based step whose K lies in the band.
    pub entered: Option<usize>,
    /// In-band fraction of the 100 steps after `entered`.
    pub in_band_after: f64,
}

/// Three tensors holding 30,000 active entries whose magnitudes are redrawn
/// from U(0, 0.1) before every step. The threshold starts a factor of 2 off
/// the value that prunes `prune_target` entries in expectation.
pub fn setpoint_trace(prune_target: usize, tolerance: f64, steps: usize, seed: u64) -> Result<SetpointTrace> {
    let mut rng = stream_rng(seed, Stream::Noise);
    let mut realloc_rng = stream_rng(seed, Stream::Realloc);
    let sizes = [40_000usize, 15_000, 5_000];
    let mut ts: Vec<MaskedTensor> = sizes
        .iter()
        .map(|&n| {
            let idx: Vec<usize> = (0..n / 2).map(|i| 2 * i).collect();
            MaskedTensor::new(vec![n], vec![0.0; n], Mask::from_indices(n, &idx)).expect("lengths")
        })
        .collect();
    let active: usize = ts.iter().map(MaskedTensor::active_count).sum();
    let h_star = 0.1 * prune_target as f64 / active as f64;
    let cfg = step_config(prune_target, tolerance, h_star / 2.0);
    let mut state = ReallocState::new(&cfg);
    let lo = (1.0 - tolerance) * prune_target as f64;
    let hi = (1.0 + tolerance) * prune_target as f64;
    let mut pruned = Vec::with_capacity(steps);
    let mut thresholds = Vec::with_capacity(steps);
    for _ in 0..steps {
        for t in ts.iter_mut() {
            let idx = t.active_indices().to_vec();
            for i in idx {
                let mag = rng.random_range(f64::MIN_POSITIVE..0.1);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                t.set_active_value(i, sign * mag);
            }
        }
        thresholds.push(state.threshold);
        let mut refs: Vec<&mut MaskedTensor> = ts.iter_mut().collect();
        pruned.push(realloc_step(&mut refs, &mut state, &cfg, &mut realloc_rng)?.pruned);
    }
    let in_band = |k: usize| (k as f64) >= lo && (k as f64) <= hi;
    let entered = pruned.iter().position(|&k| in_band(k)).map(|i| i + 1);
    let in_band_after = match entered {
        Some(e) => {
            let next = &pruned[e..(e + 100).min(pruned.len())];
            next.iter().filter(|&&k| in_band(k)).count() as f64 / next.len().max(1) as f64
        }
        None => 0.0,
    };
    Ok(SetpointTrace {
        pruned,
        thresholds,
        entered,
        in_band_after,
    })
}

pub fn check_setpoint(seed: u64) -> Result<CheckResult> {
    timed("setpoint", || {
        let trace = setpoint_trace(600, 0.1, 130, seed)?;
        let passed = trace.entered.is_some_and(|e| e <= 30) && trace.in_band_after >= 0.9;
        Ok((
            passed,
            format!(
                "entered band at step {:?}, {:.0}% in band afterwards",
                trace.entered,
                100.0 * trace.in_band_after
            ),
        ))
    })
}

pub fn check_gradients(instances: usize, seed: u64) -> Result<CheckResult> {
    timed("gradient_check", || {
        let mut rng = stream_rng(seed, Stream::Init);
        let mut worst = Vec::new();
        for kind in CheckKind::ALL {
            worst.push((kind, gradcheck::check_kind(kind, instances, &mut rng)?));
        }
        let passed = worst.iter().all(|&(_, e)| e < 1e-4);
        let detail = worst
            .iter()
            .map(|(k, e)| format!("{} {e:.1e}", k.name()))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((passed, format!("{instances} instances each; max rel err {detail}")))
    })
}

/// Logits of a random sparse CNN before and after a step whose threshold
/// lies below every active magnitude.
pub fn zero_growth_outputs(seed: u64) -> Result<(Tensor, Tensor)> {
    let mut rng = stream_rng(seed, Stream::Init);
    let net = NetworkSpec::small_cnn(1, 8, 4, 3);
    let mut params = init_params(&net, Some(0.7), InitGranularity::Weight, &mut rng)?.params;
    let x = Tensor::new(
        vec![5, 1, 8, 8],
        (0..5 * 64).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let bn = BnState::new(&net);
    let before = forward(&net, &params, &mut bn.clone(), &x, Mode::Eval)?.0;

    let min_mag = params
        .iter()
        .filter_map(Param::as_sparse)
        .flat_map(|t| t.active_indices().iter().map(|&i| t.values()[i].abs()))
        .fold(f64::INFINITY, f64::min);
    let cfg = step_config(10, 0.1, min_mag / 2.0);
    let mut state = ReallocState::new(&cfg);
    let mut refs: Vec<&mut MaskedTensor> = params.iter_mut().filter_map(Param::as_sparse_mut).collect();
    let mut realloc_rng = stream_rng(seed, Stream::Realloc);
    realloc_step(&mut refs, &mut state, &cfg, &mut realloc_rng)?;
    let after = forward(&net, &params, &mut bn.clone(), &x, Mode::Eval)?.0;
    Ok((before, after))
}

pub fn check_zero_growth(seed: u64) -> Result<CheckResult> {
    timed("zero_growth", || {
        let (a, b) = zero_growth_outputs(seed)?;
        let same = a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        Ok((same, format!("{} logits bit-identical: {same}", a.len())))
    })
}

/// Every self-check at full size.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_oracle(200, seed)?,
        check_conservation(1000, seed)?,
        check_setpoint(seed)?,
        check_gradients(50, seed)?,
        check_zero_growth(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_agrees_on_a_few_instances() {
        let r = check_oracle(30, 3).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn oracle_instance_with_overflow() {
        // tensor 0 is nearly full, so its proportional share spills over
        let inst = OracleInstance {
            tensors: vec![
                OracleTensor {
                    values: vec![0.5, 0.6, 0.7, 0.8, 0.0],
                    mask: vec![true, true, true, true, false],
                },
                OracleTensor {
                    values: vec![0.01, 0.02, 0.03, 0.0, 0.0, 0.0],
                    mask: vec![true, true, true, false, false, false],
                },
            ],
            threshold: 0.05,
            target: 3,
            tolerance: 0.1,
        };
        assert_eq!(compare_with_oracle(&inst, 1).unwrap(), None);
    }

    #[test]
    fn zero_growth_is_identity() {
        assert!(check_zero_growth(4).unwrap().passed);
    }
}
