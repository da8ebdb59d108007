//! Network-level forward and backward passes.

use crate::error::{Error, Result};
use crate::nn::layers::{self, BnGeom, ConvGeom};
use crate::nn::{LayerKind, NetworkSpec};
use crate::param::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in BatchNorm; running statistics are updated.
    Train,
    /// Running statistics in BatchNorm.
    Eval,
}

/// Which weight gradients to compute for sparse tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Dense-shaped gradient at every position, active or not.
    Full,
    /// Only active positions; inactive entries are left at 0.
    ActiveOnly,
}

/// Running mean and variance of every BatchNorm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
}

impl BnState {
    pub fn new(net: &NetworkSpec) -> Self {
        let chans = net.batchnorm_channels();
        Self {
            running_mean: chans.iter().map(|&c| vec![0.0; c]).collect(),
            running_var: chans.iter().map(|&c| vec![1.0; c]).collect(),
        }
    }
}

enum Aux {
    None,
    /// Transposed input reused by the sparse linear backward.
    SparseXt(Vec<f64>),
    /// Materialized weight of a hashed layer.
    Weight(Vec<f64>),
    Bn { xhat: Vec<f64>, inv_std: Vec<f64> },
}

/// Activation record of one forward pass.
pub struct Cache {
    batch: usize,
    inputs: Vec<Vec<f64>>,
    in_shapes: Vec<Vec<usize>>,
    aux: Vec<Aux>,
}

impl Cache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn param_slot_counts(kind: &LayerKind) -> usize {
    match kind {
        LayerKind::Linear { .. } => 2,
        LayerKind::Conv3x3 { .. } => 1,
        LayerKind::BatchNorm { .. } => 2,
        _ => 0,
    }
}

fn check_params(net: &NetworkSpec, params: &[Param]) -> Result<()> {
    let infos = net.param_infos();
    if infos.len() != params.len() {
        return Err(Error::Shape(format!(
            "network {} expects {} tensors, got {}",
            net.name,
            infos.len(),
            params.len()
        )));
    }
    for (info, p) in infos.iter().zip(params) {
        if info.shape != p.shape() {
            return Err(Error::Shape(format!(
                "{}: expected {:?}, got {:?}",
                info.name,
                info.shape,
                p.shape()
            )));
        }
    }
    Ok(())
}

fn dense_weight(p: &Param) -> std::borrow::Cow<'_, [f64]> {
    match p {
        Param::Dense(t) => std::borrow::Cow::Borrowed(t.data()),
        Param::Sparse(t) => std::borrow::Cow::Borrowed(t.values()),
        Param::Hashed(t) => std::borrow::Cow::Owned(t.materialize().into_data()),
    }
}

fn dense_values(p: &Param) -> &[f64] {
    match p {
        Param::Dense(t) => t.data(),
        Param::Sparse(t) => t.values(),
        Param::Hashed(_) => panic!("hashed tensors are only supported as weights"),
    }
}

/// Runs the layer stack. In `Mode::Train` BatchNorm running statistics in
/// `bn` are updated.
pub fn forward(
    net: &NetworkSpec,
    params: &[Param],
    bn: &mut BnState,
    batch: &Tensor,
    mode: Mode,
) -> Result<(Tensor, Cache)> {
    check_params(net, params)?;
    let n = batch.rows();
    let expected: usize = net.input.iter().product();
    if batch.row_len() != expected {
        return Err(Error::Shape(format!(
            "batch rows hold {} values, network {} expects {:?}",
            batch.row_len(),
            net.name,
            net.input
        )));
    }
    let mut cur = batch.data().to_vec();
    let mut shape = net.input.clone();
    let mut cache = Cache {
        batch: n,
        inputs: Vec::with_capacity(net.layers.len()),
        in_shapes: Vec::with_capacity(net.layers.len()),
        aux: Vec::with_capacity(net.layers.len()),
    };
    let mut pi = 0;
    let mut bi = 0;
    for (li, layer) in net.layers.iter().enumerate() {
        let mut aux = Aux::None;
        let mut in_shape = vec![n];
        in_shape.extend_from_slice(&shape);
        let next = match layer.kind {
            LayerKind::Linear { inputs, outputs } => {
                let b = dense_values(&params[pi + 1]);
                let y = match &params[pi] {
                    Param::Sparse(w) => {
                        let (y, xt) = layers::sparse_linear_forward(
                            &cur,
                            n,
                            w.values(),
                            w.active_indices(),
                            b,
                            inputs,
                            outputs,
                        );
                        aux = Aux::SparseXt(xt);
                        y
                    }
                    Param::Dense(w) => layers::linear_forward(&cur, n, w.data(), b, inputs, outputs),
                    Param::Hashed(h) => {
                        let w = h.materialize().into_data();
                        let y = layers::linear_forward(&cur, n, &w, b, inputs, outputs);
                        aux = Aux::Weight(w);
                        y
                    }
                };
                shape = vec![outputs];
                y
            }
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
                stride,
            } => {
                let g = ConvGeom {
                    c_in: in_channels,
                    c_out: out_channels,
                    h: shape[1],
                    w: shape[2],
                    stride,
                };
                let w = dense_weight(&params[pi]);
                let y = layers::conv3x3_forward(&cur, n, &w, &g);
                if let Param::Hashed(_) = &params[pi] {
                    aux = Aux::Weight(w.into_owned());
                }
                shape = vec![out_channels, g.out_h(), g.out_w()];
                y
            }
            LayerKind::BatchNorm { channels } => {
                let g = BnGeom {
                    batch: n,
                    channels,
                    spatial: shape[1..].iter().product(),
                };
                let gamma = dense_values(&params[pi]);
                let beta = dense_values(&params[pi + 1]);
                let y = match mode {
                    Mode::Train => {
                        let out = layers::batchnorm_forward_train(&cur, &g, gamma, beta);
                        let m = (g.batch * g.spatial) as f64;
                        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
                        for c in 0..channels {
                            let rm = &mut bn.running_mean[bi][c];
                            *rm = (1.0 - layers::BN_MOMENTUM) * *rm + layers::BN_MOMENTUM * out.mean[c];
                            let rv = &mut bn.running_var[bi][c];
                            *rv = (1.0 - layers::BN_MOMENTUM) * *rv
                                + layers::BN_MOMENTUM * out.var[c] * unbias;
                        }
                        aux = Aux::Bn {
                            xhat: out.xhat,
                            inv_std: out.inv_std,
                        };
                        out.y
                    }
                    Mode::Eval => layers::batchnorm_forward_eval(
                        &cur,
                        &g,
                        gamma,
                        beta,
                        &bn.running_mean[bi],
                        &bn.running_var[bi],
                    ),
                };
                bi += 1;
                y
            }
            LayerKind::Relu => layers::relu_forward(&cur),
            LayerKind::GlobalAvgPool => {
                let spatial: usize = shape[1..].iter().product();
                let y = layers::global_avg_pool_forward(&cur, n, shape[0], spatial);
                shape = vec![shape[0]];
                y
            }
            LayerKind::SoftmaxCrossEntropy => cur.clone(),
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activation of layer {li}")));
        }
        cache.in_shapes.push(in_shape);
        cache.inputs.push(std::mem::replace(&mut cur, next));
        cache.aux.push(aux);
        pi += param_slot_counts(&layer.kind);
    }
    let mut out_shape = vec![n];
    out_shape.extend(shape);
    Ok((Tensor::new(out_shape, cur)?, cache))
}

/// Logits without recording activations, using running BatchNorm statistics.
pub fn predict(net: &NetworkSpec, params: &[Param], bn: &BnState, batch: &Tensor) -> Result<Tensor> {
    let mut scratch = bn.clone();
    forward(net, params, &mut scratch, batch, Mode::Eval).map(|(y, _)| y)
}

/// Gradients for every trainable tensor, aligned with `params`. Hashed
/// tensors receive gradients over their shared slots.
pub fn backward(
    net: &NetworkSpec,
    params: &[Param],
    cache: &Cache,
    grad_logits: &Tensor,
    grad_mode: GradMode,
) -> Result<Vec<Tensor>> {
    let n = cache.batch;
    let mut grads: Vec<Option<Tensor>> = vec![None; params.len()];
    let mut d = grad_logits.data().to_vec();
    let starts: Vec<usize> = net
        .layers
        .iter()
        .scan(0, |acc, l| {
            let s = *acc;
            *acc += param_slot_counts(&l.kind);
            Some(s)
        })
        .collect();
    for li in (0..net.layers.len()).rev() {
        let layer = &net.layers[li];
        let x = &cache.inputs[li];
        let in_shape = &cache.in_shapes[li];
        let pi = starts[li];
        let need_dx = li > 0;
        d = match layer.kind {
            LayerKind::Linear { inputs, outputs } => {
                let g = match (&params[pi], &cache.aux[li]) {
                    (Param::Sparse(w), Aux::SparseXt(xt)) => match grad_mode {
                        GradMode::ActiveOnly => layers::sparse_linear_backward(
                            xt,
                            &d,
                            n,
                            w.values(),
                            w.active_indices(),
                            inputs,
                            outputs,
                            need_dx,
                        ),
                        GradMode::Full => {
                            layers::linear_backward(x, &d, n, w.values(), inputs, outputs, need_dx)
                        }
                    },
                    (Param::Hashed(_), Aux::Weight(w)) => {
                        layers::linear_backward(x, &d, n, w, inputs, outputs, need_dx)
                    }
                    (p, _) => layers::linear_backward(x, &d, n, dense_values(p), inputs, outputs, need_dx),
                };
                grads[pi] = Some(weight_grad(&params[pi], g.dw)?);
                grads[pi + 1] = Some(Tensor::new(vec![outputs], g.db)?);
                g.dx
            }
            LayerKind::Conv3x3 {
                in_channels,
                out_channels,
                stride,
            } => {
                let geom = ConvGeom {
                    c_in: in_channels,
                    c_out: out_channels,
                    h: in_shape[2],
                    w: in_shape[3],
                    stride,
                };
                let w: std::borrow::Cow<'_, [f64]> = match &cache.aux[li] {
                    Aux::Weight(w) => std::borrow::Cow::Borrowed(w),
                    _ => dense_weight(&params[pi]),
                };
                let (dx, mut dw) = layers::conv3x3_backward(x, &d, n, &w, &geom, need_dx);
                if let (Param::Sparse(t), GradMode::ActiveOnly) = (&params[pi], grad_mode) {
                    for (i, g) in dw.iter_mut().enumerate() {
                        if !t.is_active(i) {
                            *g = 0.0;
                        }
                    }
                }
                grads[pi] = Some(weight_grad(&params[pi], dw)?);
                dx
            }
            LayerKind::BatchNorm { channels } => {
                let g = BnGeom {
                    batch: n,
                    channels,
                    spatial: in_shape[2..].iter().product(),
                };
                let Aux::Bn { xhat, inv_std } = &cache.aux[li] else {
                    return Err(Error::InvalidArgument(
                        "backward through BatchNorm needs a Mode::Train forward".into(),
                    ));
                };
                let gamma = dense_values(&params[pi]);
                let (dx, dgamma, dbeta) = layers::batchnorm_backward(&d, xhat, inv_std, gamma, &g);
                grads[pi] = Some(Tensor::new(vec![channels], dgamma)?);
                grads[pi + 1] = Some(Tensor::new(vec![channels], dbeta)?);
                dx
            }
            LayerKind::Relu => layers::relu_backward(x, &d),
            LayerKind::GlobalAvgPool => {
                let spatial: usize = in_shape[2..].iter().product();
                layers::global_avg_pool_backward(&d, spatial)
            }
            LayerKind::SoftmaxCrossEntropy => d,
        };
        if !need_dx {
            break;
        }
    }
    let grads: Vec<Tensor> = grads
        .into_iter()
        .enumerate()
        .map(|(i, g)| g.ok_or_else(|| Error::InvalidArgument(format!("no gradient for tensor {i}"))))
        .collect::<Result<_>>()?;
    for (i, g) in grads.iter().enumerate() {
        g.ensure_finite(&format!("gradient of tensor {i}"))?;
    }
    Ok(grads)
}

fn weight_grad(p: &Param, dw: Vec<f64>) -> Result<Tensor> {
    match p {
        Param::Hashed(h) => Ok(Tensor::from_vec(h.accumulate_grad(&dw))),
        other => Tensor::new(other.shape().to_vec(), dw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use crate::param::{init_params, InitGranularity};
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn logits_shape_is_batch_by_classes() {
        let net = NetworkSpec::mlp("t", 6, &[5], 3, true);
        let mut rng = stream_rng(1, Stream::Init);
        let init = init_params(&net, Some(0.5), InitGranularity::Weight, &mut rng).unwrap();
        let mut bn = BnState::new(&net);
        let x = Tensor::new(vec![4, 6], (0..24).map(|i| i as f64 / 24.0).collect()).unwrap();
        let (y, _) = forward(&net, &init.params, &mut bn, &x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[4, 3]);
    }

    #[test]
    fn wrong_batch_width_is_rejected() {
        let net = NetworkSpec::mlp("t", 6, &[], 3, false);
        let mut rng = stream_rng(1, Stream::Init);
        let init = init_params(&net, None, InitGranularity::Weight, &mut rng).unwrap();
        let x = Tensor::zeros(&[2, 5]);
        let mut bn = BnState::new(&net);
        assert!(matches!(
            forward(&net, &init.params, &mut bn, &x, Mode::Train),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let net = NetworkSpec::mlp("t", 2, &[], 2, false);
        let mut rng = stream_rng(1, Stream::Init);
        let init = init_params(&net, None, InitGranularity::Weight, &mut rng).unwrap();
        let x = Tensor::new(vec![1, 2], vec![f64::INFINITY, 0.0]).unwrap();
        let mut bn = BnState::new(&net);
        assert!(matches!(
            forward(&net, &init.params, &mut bn, &x, Mode::Train),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn active_only_zeroes_inactive_grads_full_reports_them() {
        let net = NetworkSpec::mlp("t", 8, &[], 4, true);
        let mut rng = stream_rng(2, Stream::Init);
        let init = init_params(&net, Some(0.75), InitGranularity::Weight, &mut rng).unwrap();
        let mut bn = BnState::new(&net);
        let x = Tensor::new(vec![3, 8], (0..24).map(|i| 1.0 + i as f64).collect()).unwrap();
        let (y, cache) = forward(&net, &init.params, &mut bn, &x, Mode::Train).unwrap();
        let gy = Tensor::filled(y.shape(), 1.0);
        let full = backward(&net, &init.params, &cache, &gy, GradMode::Full).unwrap();
        let active = backward(&net, &init.params, &cache, &gy, GradMode::ActiveOnly).unwrap();
        let w = init.params[0].as_sparse().unwrap();
        for i in 0..w.dense_len() {
            if w.is_active(i) {
                assert!((full[0].data()[i] - active[0].data()[i]).abs() < 1e-12);
            } else {
                assert_eq!(active[0].data()[i], 0.0);
                assert!(full[0].data()[i] != 0.0);
            }
        }
    }
}
