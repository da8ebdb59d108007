//! Narrow dense LeNet-300-100 variants sized to sparse runs.

use sparsetrain::baselines::build_thin_dense;
use sparsetrain::nn::{LayerKind, NetworkSpec};

fn main() -> sparsetrain::Result<()> {
    let net = NetworkSpec::lenet_300_100();
    for s in [0.5, 0.8, 0.9, 0.95, 0.99] {
        let thin = build_thin_dense(&net, s)?;
        let widths: Vec<usize> = thin
            .net
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Linear { outputs, .. } => Some(outputs),
                _ => None,
            })
            .collect();
        println!(
            "s = {s:<5} scale {:.4}  widths {widths:?}  weights {} (target {:.0})",
            thin.width_scale, thin.weights, thin.target
        );
    }
    Ok(())
}
