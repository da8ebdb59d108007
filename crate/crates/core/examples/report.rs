//! Two runs written to disk, then summarized into CSV tables and an SVG.

use sparsetrain::harness::report::report;
use sparsetrain::harness::{load_data, presets, train, Method};

fn main() -> sparsetrain::Result<()> {
    let root = std::env::temp_dir().join("sparsetrain_report_example");
    let mut dirs = Vec::new();
    for method in [Method::DynamicSparse, Method::StaticSparse] {
        let cfg = presets::synthetic(method, 4);
        let data = load_data(&cfg.data, cfg.seed, None)?;
        let dir = root.join(method.name());
        train(cfg, &data, Some(&dir))?;
        dirs.push(dir);
    }
    let out = report(&dirs, &root.join("report"))?;
    for (id, s) in &out.runs {
        println!("{id}: {} params, acc {:.3}", s.param_count, s.final_test_acc);
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
