//! Weight sharing through a hash: a virtual dense layer backed by a few
//! shared values, and a full training run with hashed layers.

use sparsetrain::baselines::HashedTensor;
use sparsetrain::harness::{load_data, presets, train, Method};

fn main() -> sparsetrain::Result<()> {
    let h = HashedTensor::new(vec![2, 4], 3, 42, 0, vec![-1.0, 0.5, 2.0])?;
    println!("slots {:?}", h.slots());
    println!("virtual weight {:?}", h.materialize().data());

    let cfg = presets::synthetic(Method::Hashed, 6);
    let data = load_data(&cfg.data, cfg.seed, None)?;
    let t = train(cfg, &data, None)?;
    let s = t.summary();
    println!("hashed run: acc {:.3} with {} free parameters", s.final_test_acc, s.param_count);
    Ok(())
}
