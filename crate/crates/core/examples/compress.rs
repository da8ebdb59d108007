//! Dense pretraining, then gradual magnitude pruning along the cubic ramp.

use sparsetrain::baselines::CompressionSchedule;
use sparsetrain::harness::{compress_iterative, load_data, presets, Method, Trainer};
use sparsetrain::schedule::EpochSchedule;

fn main() -> sparsetrain::Result<()> {
    let mut cfg = presets::synthetic(Method::CompressedSparse, 4);
    cfg.compression = Some(CompressionSchedule {
        events: 5,
        epochs_between: 1,
        epochs_post: 3,
        lr_schedule: EpochSchedule::new(vec![([1, 5], 0.02), ([6, 8], 0.004)]),
        per_layer: false,
    });
    cfg.validate()?;
    let data = load_data(&cfg.data, cfg.seed, None)?;
    let mut t = Trainer::new(cfg)?;
    while t.epoch < t.cfg.epochs {
        let row = t.run_epoch(&data)?;
        println!("dense epoch {}: acc {:.3}", row.epoch, row.test_acc);
    }
    for e in compress_iterative(&mut t, &data)? {
        println!(
            "event {} at epoch {}: target {:.4}, {} of {} active",
            e.event, e.epoch, e.scheduled_sparsity, e.active, e.dense
        );
    }
    println!("final acc {:.3}", t.log.final_accuracy());
    Ok(())
}
