//! Static, SET and DeepR runs side by side on synthetic data.

use sparsetrain::harness::{load_data, presets, train, Method};

fn main() -> sparsetrain::Result<()> {
    for method in [Method::StaticSparse, Method::Set, Method::Deepr, Method::DynamicSparse] {
        let cfg = presets::synthetic(method, 6);
        let data = load_data(&cfg.data, cfg.seed, None)?;
        let t = train(cfg, &data, None)?;
        let (s, per) = t.tracked_sparsity();
        println!(
            "{:<15} epochs {:>2}  acc {:.3}  sparsity {:.4}  per tensor {:.3?}",
            method.name(),
            t.epoch,
            t.log.final_accuracy(),
            s,
            per
        );
    }
    Ok(())
}
