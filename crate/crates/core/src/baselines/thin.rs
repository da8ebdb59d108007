//! Thin dense baseline: hidden widths scaled down so the weight count
//! matches the storage of a sparse model with the same layout.

use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, NetworkSpec};
use crate::sizing::descriptive_length;

/// `net` with hidden widths multiplied by `c` (rounded, at least 1). Input,
/// output and class dimensions are kept; every layer is dense.
pub fn scale_widths(net: &NetworkSpec, c: f64) -> NetworkSpec {
    let scale = |w: usize| ((w as f64 * c).round() as usize).max(1);
    let last_linear = net
        .layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Linear { .. }));
    let mut cur = match net.layers.first().map(|l| l.kind) {
        Some(LayerKind::Linear { .. }) => net.input.iter().product(),
        _ => net.input.first().copied().unwrap_or(0),
    };
    let mut layers = Vec::with_capacity(net.layers.len());
    for (li, l) in net.layers.iter().enumerate() {
        let kind = match l.kind {
            LayerKind::Linear { outputs, .. } => {
                let out = if Some(li) == last_linear { outputs } else { scale(outputs) };
                let k = LayerKind::Linear { inputs: cur, outputs: out };
                cur = out;
                k
            }
            LayerKind::Conv3x3 { out_channels, stride, .. } => {
                let out = scale(out_channels);
                let k = LayerKind::Conv3x3 {
                    in_channels: cur,
                    out_channels: out,
                    stride,
                };
                cur = out;
                k
            }
            LayerKind::BatchNorm { .. } => LayerKind::BatchNorm { channels: cur },
            other => other,
        };
        layers.push(LayerSpec::new(kind));
    }
    NetworkSpec {
        name: format!("{}-thin", net.name),
        input: net.input.clone(),
        layers,
    }
}

/// Weights of the layers that are sparse in `original`, counted in `thin`.
fn matched_weights(original: &NetworkSpec, thin: &NetworkSpec) -> usize {
    original
        .param_infos()
        .iter()
        .zip(thin.param_infos())
        .filter(|(o, _)| o.sparse)
        .map(|(_, t)| t.len())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThinDense {
    pub net: NetworkSpec,
    pub width_scale: f64,
    /// Weight count the scaling aimed for.
    pub target: f64,
    /// Weight count reached.
    pub weights: usize,
}

/// Scales hidden widths so the weights of the sparse-eligible layers come
/// as close as possible to `((1 - s) + 1/32) N_sparse`.
pub fn build_thin_dense(net: &NetworkSpec, s: f64) -> Result<ThinDense> {
    if !(s >= 0.0 && s < 1.0) {
        return Err(Error::InvalidArgument(format!("sparsity must lie in [0, 1), got {s}")));
    }
    net.shapes()?;
    let target = descriptive_length(net.sparse_weight_count(), s).thin_dense_equivalent_count;
    let count = |c: f64| matched_weights(net, &scale_widths(net, c));
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while (count(hi) as f64) < target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if (count(mid) as f64) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = if (count(hi) as f64 - target).abs() <= (count(lo) as f64 - target).abs() {
        hi
    } else {
        lo
    };
    // snap to exact widths when the target is the original network
    let c = if scale_widths(net, c).layers.iter().map(|l| l.kind).eq(net.layers.iter().map(|l| l.kind)) {
        1.0
    } else {
        c
    };
    let thin = scale_widths(net, c);
    thin.shapes()?;
    Ok(ThinDense {
        weights: matched_weights(net, &thin),
        net: thin,
        width_scale: c,
        target,
    })
}
