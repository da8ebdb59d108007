//! Dynamic sparse training of a small MLP on synthetic blobs, with the
//! global sparsity checked after every epoch.

use sparsetrain::harness::{load_data, presets, Method, Trainer};

fn main() -> sparsetrain::Result<()> {
    env_logger::init();
    let cfg = presets::synthetic(Method::DynamicSparse, 8);
    let data = load_data(&cfg.data, cfg.seed, None)?;
    let mut t = Trainer::new(cfg)?;
    while !t.is_done() {
        let row = t.run_epoch(&data)?;
        println!(
            "epoch {:>2}  loss {:.4}  acc {:.3}  sparsity {:.4}  H {:?}",
            row.epoch, row.train_loss, row.test_acc, row.global_sparsity, row.threshold
        );
    }
    println!("{} reallocation steps", t.log.steps.len());
    Ok(())
}
