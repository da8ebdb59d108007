//! Central finite-difference checks of the analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::baselines::HashedTensor;
use crate::error::Result;
use crate::nn::layers::softmax_cross_entropy;
use crate::nn::{backward, forward, BnState, GradMode, LayerKind, LayerSpec, Mode, NetworkSpec};
use crate::param::{init_params, InitGranularity, Param};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that entries whose true
/// gradient is ~0 are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Layer kinds covered by [`check_kind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Linear,
    SparseLinear,
    Conv3x3,
    Conv3x3Strided,
    Relu,
    BatchNorm,
    GlobalAvgPool,
    SoftmaxCrossEntropy,
    Hashed,
}

impl CheckKind {
    pub const ALL: [CheckKind; 9] = [
        CheckKind::Linear,
        CheckKind::SparseLinear,
        CheckKind::Conv3x3,
        CheckKind::Conv3x3Strided,
        CheckKind::Relu,
        CheckKind::BatchNorm,
        CheckKind::GlobalAvgPool,
        CheckKind::SoftmaxCrossEntropy,
        CheckKind::Hashed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Linear => "linear",
            CheckKind::SparseLinear => "sparse_linear",
            CheckKind::Conv3x3 => "conv3x3",
            CheckKind::Conv3x3Strided => "conv3x3_stride2",
            CheckKind::Relu => "relu",
            CheckKind::BatchNorm => "batchnorm",
            CheckKind::GlobalAvgPool => "global_avg_pool",
            CheckKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            CheckKind::Hashed => "hashed",
        }
    }
}

fn lin(i: usize, o: usize) -> LayerSpec {
    LayerSpec::new(LayerKind::Linear { inputs: i, outputs: o })
}

fn conv(i: usize, o: usize, stride: usize) -> LayerSpec {
    LayerSpec::new(LayerKind::Conv3x3 {
        in_channels: i,
        out_channels: o,
        stride,
    })
}

fn ce() -> LayerSpec {
    LayerSpec::new(LayerKind::SoftmaxCrossEntropy)
}

/// A small random network exercising `kind`.
fn instance_net(kind: CheckKind, rng: &mut ChaCha20Rng) -> NetworkSpec {
    let d = rng.random_range(2..6usize);
    let c = rng.random_range(2..5usize);
    let ch = rng.random_range(1..3usize);
    let side = rng.random_range(3..6usize);
    let (input, layers) = match kind {
        CheckKind::Linear | CheckKind::SoftmaxCrossEntropy | CheckKind::Hashed => (vec![d], vec![lin(d, c), ce()]),
        CheckKind::SparseLinear => {
            let mut l = lin(d, c);
            l.sparse = true;
            (vec![d], vec![l, ce()])
        }
        CheckKind::Relu => {
            let h = rng.random_range(2..6usize);
            (vec![d], vec![lin(d, h), LayerSpec::new(LayerKind::Relu), lin(h, c), ce()])
        }
        CheckKind::Conv3x3 | CheckKind::Conv3x3Strided => {
            let s = if kind == CheckKind::Conv3x3 { 1 } else { 2 };
            let o = rng.random_range(1..4usize);
            let flat = o * side.div_ceil(s) * side.div_ceil(s);
            (vec![ch, side, side], vec![conv(ch, o, s), lin(flat, c), ce()])
        }
        CheckKind::BatchNorm => {
            // a linear readout of the full map: pooling BN output directly
            // would give beta, and a ReLU in between adds kinks
            let o = rng.random_range(1..4usize);
            (
                vec![ch, side, side],
                vec![
                    conv(ch, o, 1),
                    LayerSpec::new(LayerKind::BatchNorm { channels: o }),
                    lin(o * side * side, c),
                    ce(),
                ],
            )
        }
        CheckKind::GlobalAvgPool => {
            let o = rng.random_range(1..4usize);
            (
                vec![ch, side, side],
                vec![conv(ch, o, 1), LayerSpec::new(LayerKind::GlobalAvgPool), lin(o, c), ce()],
            )
        }
    };
    NetworkSpec {
        name: format!("check-{}", kind.name()),
        input,
        layers,
    }
}

fn loss(net: &NetworkSpec, params: &[Param], x: &Tensor, y: &[usize], classes: usize) -> Result<f64> {
    let mut bn = BnState::new(net);
    let (logits, _) = forward(net, params, &mut bn, x, Mode::Train)?;
    Ok(softmax_cross_entropy(logits.data(), y, classes).0)
}

/// Mutable trainable scalars of a parameter (active entries for sparse
/// tensors, shared slots for hashed ones) with their gradient offsets.
fn free_slots(p: &Param) -> Vec<usize> {
    match p {
        Param::Dense(t) => (0..t.len()).collect(),
        Param::Sparse(t) => t.active_indices().to_vec(),
        Param::Hashed(h) => (0..h.unique_count()).collect(),
    }
}

fn nudge(p: &mut Param, i: usize, delta: f64) {
    match p {
        Param::Dense(t) => t.data_mut()[i] += delta,
        Param::Sparse(t) => {
            let v = t.values()[i];
            t.set_active_value(i, v + delta);
        }
        Param::Hashed(h) => h.unique_mut()[i] += delta,
    }
}

/// Maximum relative error over all trainable scalars of one random
/// instance of `kind`.
pub fn check_instance(kind: CheckKind, rng: &mut ChaCha20Rng) -> Result<f64> {
    let net = instance_net(kind, rng);
    let classes = net.num_classes()?;
    let sparsity = (kind == CheckKind::SparseLinear).then_some(0.5);
    let mut params = init_params(&net, sparsity, InitGranularity::Weight, rng)?.params;
    // non-trivial biases and normalization parameters
    for p in params.iter_mut() {
        if let Param::Dense(t) = p {
            for v in t.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    if kind == CheckKind::Hashed {
        let shape = params[0].shape().to_vec();
        let n: usize = shape.iter().product();
        let m = rng.random_range(1..=n);
        let unique = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        params[0] = Param::Hashed(HashedTensor::new(shape, m, rng.random(), 0, unique)?);
    }
    let batch = rng.random_range(2..5usize);
    let per: usize = net.input.iter().product();
    let mut xs: Vec<f64> = (0..batch * per).map(|_| rng.random_range(-1.0..1.0)).collect();
    if kind == CheckKind::Relu {
        // keep pre-activations away from the kink by scaling inputs up
        xs.iter_mut().for_each(|v| *v *= 3.0);
    }
    let mut shape = vec![batch];
    shape.extend(&net.input);
    let x = Tensor::new(shape, xs)?;
    let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

    let mut bn = BnState::new(&net);
    let (logits, cache) = forward(&net, &params, &mut bn, &x, Mode::Train)?;
    let (_, g) = softmax_cross_entropy(logits.data(), &y, classes);
    let g = Tensor::new(logits.shape().to_vec(), g)?;
    let grads = backward(&net, &params, &cache, &g, GradMode::ActiveOnly)?;

    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        for i in free_slots(&params[pi]) {
            let mut plus = params.clone();
            nudge(&mut plus[pi], i, STEP);
            let mut minus = params.clone();
            nudge(&mut minus[pi], i, -STEP);
            let numeric = (loss(&net, &plus, &x, &y, classes)? - loss(&net, &minus, &x, &y, classes)?) / (2.0 * STEP);
            worst = worst.max(relative_error(grads[pi].data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Worst error over `instances` random instances of `kind`.
pub fn check_kind(kind: CheckKind, instances: usize, rng: &mut ChaCha20Rng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        worst = worst.max(check_instance(kind, rng)?);
    }
    Ok(worst)
}
