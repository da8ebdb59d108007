//! LeNet-300-100 on MNIST with a shipped preset.
//!
//! cargo run --release --example train_mnist -- [method] [epochs] [sparsity]
//!
//! Needs the four IDX files in data/mnist or $SPARSETRAIN_DATA_DIR.

use std::path::Path;

use sparsetrain::harness::{load_data, presets, train, Method};

fn main() -> sparsetrain::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let method: Method = args.first().map_or(Ok(Method::DynamicSparse), |s| s.parse())?;
    let mut cfg = presets::mnist(method);
    if let Some(e) = args.get(1) {
        cfg = cfg.rescaled(e.parse().expect("epochs"));
    }
    if let Some(s) = args.get(2) {
        cfg.sparsity = s.parse().expect("sparsity");
    }
    let data = load_data(&cfg.data, cfg.seed, None)?;
    let out = Path::new("runs").join(format!("example_{method}"));
    let t = train(cfg, &data, Some(&out))?;
    let s = t.summary();
    println!("accuracy {:.4} with {} parameters", s.final_test_acc, s.param_count);
    for (name, sp) in s.tensor_names.iter().zip(&s.tensor_sparsity) {
        println!("  {name}: sparsity {sp:.4}");
    }
    Ok(())
}
