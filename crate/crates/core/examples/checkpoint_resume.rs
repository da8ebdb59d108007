//! Stop a run halfway, save, reload and continue.

use sparsetrain::harness::checkpoint::Checkpoint;
use sparsetrain::harness::{load_data, presets, Method, Trainer};

fn main() -> sparsetrain::Result<()> {
    let cfg = presets::synthetic(Method::DynamicSparse, 6);
    let data = load_data(&cfg.data, cfg.seed, None)?;
    let mut t = Trainer::new(cfg)?;
    for _ in 0..3 {
        t.run_epoch(&data)?;
    }
    let path = std::env::temp_dir().join("sparsetrain_example.ckpt");
    t.checkpoint().save(&path)?;
    let ck = Checkpoint::load(&path)?;
    let mut resumed = Trainer::resume(&ck, t.dense_init.clone())?;
    t.run(&data)?;
    resumed.run(&data)?;
    println!(
        "uninterrupted acc {:.4}, resumed acc {:.4}, identical parameters: {}",
        t.log.final_accuracy(),
        resumed.log.final_accuracy(),
        t.params == resumed.params
    );
    Ok(())
}
