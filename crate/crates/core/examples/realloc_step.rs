//! One prune/grow step across three small tensors.

use sparsetrain::realloc::{realloc_step, ReallocConfig, ReallocState};
use sparsetrain::rng::{stream_rng, Stream};
use sparsetrain::schedule::EpochSchedule;
use sparsetrain::sparse::{Mask, MaskedTensor};

fn tensor(values: &[f64]) -> MaskedTensor {
    let active: Vec<usize> = (0..values.len()).filter(|&i| values[i] != 0.0).collect();
    MaskedTensor::new(vec![values.len()], values.to_vec(), Mask::from_indices(values.len(), &active)).unwrap()
}

fn main() -> sparsetrain::Result<()> {
    let mut ts = vec![
        tensor(&[0.5, -0.004, 0.0, 0.3, 0.002, 0.0, 0.0, 0.9]),
        tensor(&[0.0, 0.0, 0.07, -0.008, 0.0, 0.0]),
        tensor(&[0.2, 0.4, 0.0, 0.0, 0.0, -0.6, 0.1, 0.0, 0.0, 0.0]),
    ];
    let cfg = ReallocConfig {
        prune_target: 4,
        tolerance: 0.25,
        initial_threshold: 0.01,
        period_schedule: EpochSchedule::constant(1, 100),
        granularity: Default::default(),
        stop_epoch: None,
    };
    let mut state = ReallocState::new(&cfg);
    let mut rng = stream_rng(7, Stream::Realloc);
    let mut refs: Vec<&mut MaskedTensor> = ts.iter_mut().collect();
    let report = realloc_step(&mut refs, &mut state, &cfg, &mut rng)?;

    println!("H {} -> {}", report.threshold_before, report.threshold_after);
    for (i, (s, t)) in report.tensors.iter().zip(&ts).enumerate() {
        println!(
            "tensor {i}: {} active, pruned {}, grew {}, now {:?}",
            s.active_before,
            s.pruned,
            s.grown,
            t.active_indices()
        );
    }
    Ok(())
}
