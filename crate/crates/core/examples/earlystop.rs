//! Reallocation switched off after different epochs.

use sparsetrain::harness::earlystop::run_earlystop_sweep;
use sparsetrain::harness::{load_data, presets, Method};

fn main() -> sparsetrain::Result<()> {
    let cfg = presets::synthetic(Method::DynamicSparse, 8);
    let data = load_data(&cfg.data, cfg.seed, None)?;
    for r in run_earlystop_sweep(&cfg, &[0, 2, 4, 8], &data, None)? {
        println!("stop after epoch {}: acc {:.3}, {} steps", r.stop_epoch, r.final_test_acc, r.realloc_steps);
    }
    Ok(())
}
