//! Epoch time of reallocating methods relative to a fixed-mask run.

use sparsetrain::harness::overhead::measure_overhead;
use sparsetrain::harness::{load_data, presets, Method};

fn main() -> sparsetrain::Result<()> {
    let base = presets::synthetic(Method::StaticSparse, 10);
    let data = load_data(&base.data, base.seed, None)?;
    let others: Vec<_> = [Method::DynamicSparse, Method::Set, Method::Deepr]
        .into_iter()
        .map(|m| presets::synthetic(m, 10))
        .collect();
    for r in measure_overhead(&base, &others, 5, &data)? {
        println!("{:<15} {:.4}s  ratio {:.3} ± {:.3}", r.method.name(), r.median_epoch_seconds, r.ratio, r.ratio_std);
    }
    Ok(())
}
