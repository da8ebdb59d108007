//! Layer kernels on flat row-major buffers.
//!
//! Activations are `[batch, features]` or `[batch, channels, height, width]`.
//! Every kernel has a fixed reduction order, so results are bit-reproducible.

use crate::tensor::transpose;

#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass buffers sized for the given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// `y = x w^T + b` with `w: [out, in]`.
pub fn linear_forward(x: &[f64], batch: usize, w: &[f64], b: &[f64], inputs: usize, outputs: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * outputs];
    for row in y.chunks_exact_mut(outputs) {
        row.copy_from_slice(b);
    }
    gemm(
        batch,
        inputs,
        outputs,
        x,
        (inputs as isize, 1),
        w,
        (1, inputs as isize),
        1.0,
        &mut y,
        (outputs as isize, 1),
    );
    y
}

pub struct LinearGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn linear_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    w: &[f64],
    inputs: usize,
    outputs: usize,
    need_dx: bool,
) -> LinearGrads {
    let mut dx = Vec::new();
    if need_dx {
        dx = vec![0.0; batch * inputs];
        gemm(
            batch,
            outputs,
            inputs,
            dy,
            (outputs as isize, 1),
            w,
            (inputs as isize, 1),
            0.0,
            &mut dx,
            (inputs as isize, 1),
        );
    }
    let mut dw = vec![0.0; outputs * inputs];
    gemm(
        outputs,
        batch,
        inputs,
        dy,
        (1, outputs as isize),
        x,
        (inputs as isize, 1),
        0.0,
        &mut dw,
        (inputs as isize, 1),
    );
    LinearGrads {
        dx,
        dw,
        db: column_sums(dy, batch, outputs),
    }
}

fn column_sums(dy: &[f64], batch: usize, outputs: usize) -> Vec<f64> {
    let mut db = vec![0.0; outputs];
    for r in 0..batch {
        for (d, g) in db.iter_mut().zip(&dy[r * outputs..(r + 1) * outputs]) {
            *d += g;
        }
    }
    db
}

/// Sparse forward over the active flat indices of `w`. Returns `y` and the
/// transposed input `[in, batch]`, reused by the backward pass.
pub fn sparse_linear_forward(
    x: &[f64],
    batch: usize,
    w: &[f64],
    active: &[usize],
    b: &[f64],
    inputs: usize,
    outputs: usize,
) -> (Vec<f64>, Vec<f64>) {
    let xt = transpose(x, batch, inputs);
    let mut yt = vec![0.0; outputs * batch];
    for (j, row) in yt.chunks_exact_mut(batch).enumerate() {
        row.fill(b[j]);
    }
    for &k in active {
        let (j, i) = (k / inputs, k % inputs);
        let wk = w[k];
        let xi = &xt[i * batch..(i + 1) * batch];
        let yj = &mut yt[j * batch..(j + 1) * batch];
        for (y, x) in yj.iter_mut().zip(xi) {
            *y += wk * x;
        }
    }
    (transpose(&yt, outputs, batch), xt)
}

/// Backward of [`sparse_linear_forward`]. `dw` is filled at active positions only.
#[allow(clippy::too_many_arguments)]
pub fn sparse_linear_backward(
    xt: &[f64],
    dy: &[f64],
    batch: usize,
    w: &[f64],
    active: &[usize],
    inputs: usize,
    outputs: usize,
    need_dx: bool,
) -> LinearGrads {
    let dyt = transpose(dy, batch, outputs);
    let mut dxt = if need_dx { vec![0.0; inputs * batch] } else { Vec::new() };
    let mut dw = vec![0.0; outputs * inputs];
    for &k in active {
        let (j, i) = (k / inputs, k % inputs);
        let gj = &dyt[j * batch..(j + 1) * batch];
        let xi = &xt[i * batch..(i + 1) * batch];
        dw[k] = gj.iter().zip(xi).map(|(g, x)| g * x).sum();
        if need_dx {
            let wk = w[k];
            let dxi = &mut dxt[i * batch..(i + 1) * batch];
            for (d, g) in dxi.iter_mut().zip(gj) {
                *d += wk * g;
            }
        }
    }
    LinearGrads {
        dx: if need_dx { transpose(&dxt, inputs, batch) } else { Vec::new() },
        dw,
        db: column_sums(dy, batch, outputs),
    }
}

/// Geometry of a padded 3x3 convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h - 1) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w - 1) / self.stride + 1
    }
    fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut cols = vec![0.0; g.c_in * 9 * oh * ow];
    for c in 0..g.c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        cols[row + oy * ow + ox] = x[(c * g.h + iy as usize) * g.w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for c in 0..g.c_in {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (c * 9 + ky * 3 + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - 1;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - 1;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        dx[(c * g.h + iy as usize) * g.w + ix as usize] += cols[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

pub fn conv3x3_forward(x: &[f64], batch: usize, w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.cols();
    let k = g.c_in * 9;
    let mut y = vec![0.0; batch * out_len];
    for b in 0..batch {
        let cols = im2col(&x[b * in_len..(b + 1) * in_len], g);
        gemm(
            g.c_out,
            k,
            g.cols(),
            w,
            (k as isize, 1),
            &cols,
            (g.cols() as isize, 1),
            0.0,
            &mut y[b * out_len..(b + 1) * out_len],
            (g.cols() as isize, 1),
        );
    }
    y
}

pub fn conv3x3_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    w: &[f64],
    g: &ConvGeom,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>) {
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.cols();
    let k = g.c_in * 9;
    let n = g.cols();
    let mut dw = vec![0.0; g.c_out * k];
    let mut dx = if need_dx { vec![0.0; batch * in_len] } else { Vec::new() };
    let mut dcols = vec![0.0; k * n];
    for b in 0..batch {
        let cols = im2col(&x[b * in_len..(b + 1) * in_len], g);
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        // dw += dy_b cols^T
        gemm(
            g.c_out,
            n,
            k,
            dyb,
            (n as isize, 1),
            &cols,
            (1, n as isize),
            1.0,
            &mut dw,
            (k as isize, 1),
        );
        if need_dx {
            // dcols = w^T dy_b
            gemm(
                k,
                g.c_out,
                n,
                w,
                (1, k as isize),
                dyb,
                (n as isize, 1),
                0.0,
                &mut dcols,
                (n as isize, 1),
            );
            col2im(&dcols, g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    (dx, dw)
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel statistics layout: `[batch, channels, spatial]`.
#[derive(Debug, Clone, Copy)]
pub struct BnGeom {
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

pub struct BnTrainOut {
    pub y: Vec<f64>,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn batchnorm_forward_train(x: &[f64], g: &BnGeom, gamma: &[f64], beta: &[f64]) -> BnTrainOut {
    let m = (g.batch * g.spatial) as f64;
    let mut mean = vec![0.0; g.channels];
    let mut var = vec![0.0; g.channels];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            mean[c] += x[off..off + g.spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            var[c] += x[off..off + g.spatial]
                .iter()
                .map(|v| (v - mean[c]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            for i in off..off + g.spatial {
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
                y[i] = gamma[c] * xhat[i] + beta[c];
            }
        }
    }
    BnTrainOut {
        y,
        xhat,
        inv_std,
        mean,
        var,
    }
}

pub fn batchnorm_forward_eval(
    x: &[f64],
    g: &BnGeom,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            let inv = 1.0 / (running_var[c] + BN_EPS).sqrt();
            for i in off..off + g.spatial {
                y[i] = gamma[c] * (x[i] - running_mean[c]) * inv + beta[c];
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    g: &BnGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = (g.batch * g.spatial) as f64;
    let mut dgamma = vec![0.0; g.channels];
    let mut dbeta = vec![0.0; g.channels];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            for i in off..off + g.spatial {
                dgamma[c] += dy[i] * xhat[i];
                dbeta[c] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let off = (b * g.channels + c) * g.spatial;
            let k = gamma[c] * inv_std[c] / m;
            for i in off..off + g.spatial {
                dx[i] = k * (m * dy[i] - dbeta[c] - xhat[i] * dgamma[c]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
        .collect()
}

pub fn global_avg_pool_forward(x: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut y = vec![0.0; batch * channels];
    for (i, out) in y.iter_mut().enumerate() {
        *out = x[i * spatial..(i + 1) * spatial].iter().sum::<f64>() / spatial as f64;
    }
    y
}

pub fn global_avg_pool_backward(dy: &[f64], spatial: usize) -> Vec<f64> {
    let mut dx = Vec::with_capacity(dy.len() * spatial);
    for &d in dy {
        dx.extend(std::iter::repeat_n(d / spatial as f64, spatial));
    }
    dx
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let batch = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let z = &logits[r * classes..(r + 1) * classes];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - z[label];
        for (c, g) in grad[r * classes..(r + 1) * classes].iter_mut().enumerate() {
            let p = (z[c] - log_sum).exp();
            *g = (p - if c == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (loss / batch as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear() {
        let y = linear_forward(&[1.0, 2.0], 1, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2, 2);
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let y = linear_forward(&[3.0, -1.0, 0.5], 1, &[0.0; 6], &[0.0; 2], 3, 2);
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn sum_loss_weight_grad_is_outer_of_ones_and_input() {
        let x = [0.5, -2.0, 3.0];
        let g = linear_backward(&x, &[1.0, 1.0], 1, &[0.0; 6], 3, 2, true);
        assert_eq!(g.dw, vec![0.5, -2.0, 3.0, 0.5, -2.0, 3.0]);
        assert_eq!(g.db, vec![1.0, 1.0]);
    }

    #[test]
    fn sparse_and_dense_linear_agree() {
        let (inputs, outputs, batch) = (5, 4, 3);
        let w: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 0.1 * i as f64 - 0.7 } else { 0.0 }).collect();
        let active: Vec<usize> = (0..20).filter(|i| i % 3 == 0).collect();
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = [0.1, -0.2, 0.3, 0.0];
        let yd = linear_forward(&x, batch, &w, &b, inputs, outputs);
        let (ys, xt) = sparse_linear_forward(&x, batch, &w, &active, &b, inputs, outputs);
        for (a, c) in yd.iter().zip(&ys) {
            assert!((a - c).abs() < 1e-12);
        }
        let dy: Vec<f64> = (0..12).map(|i| (i as f64 * 0.91).cos()).collect();
        let gd = linear_backward(&x, &dy, batch, &w, inputs, outputs, true);
        let gs = sparse_linear_backward(&xt, &dy, batch, &w, &active, inputs, outputs, true);
        for (a, c) in gd.dx.iter().zip(&gs.dx) {
            assert!((a - c).abs() < 1e-12);
        }
        for &k in &active {
            assert!((gd.dw[k] - gs.dw[k]).abs() < 1e-12);
        }
        assert_eq!(gd.db, gs.db);
    }

    #[test]
    fn conv_identity_kernel_copies_input() {
        // center tap = 1 on a single channel
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let g = ConvGeom { c_in: 1, c_out: 1, h: 3, w: 4, stride: 1 };
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        assert_eq!(conv3x3_forward(&x, 1, &w, &g), x);
    }

    #[test]
    fn strided_conv_output_extent() {
        let g = ConvGeom { c_in: 2, c_out: 3, h: 5, w: 6, stride: 2 };
        assert_eq!((g.out_h(), g.out_w()), (3, 3));
        let y = conv3x3_forward(&vec![1.0; 60], 1, &vec![1.0; 54], &g);
        assert_eq!(y.len(), 27);
        // corner sees a 2x2 window in both channels
        assert_eq!(y[0], 8.0);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0; 4], &[1, 1], 2);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert!((grad[0] - 0.25).abs() < 1e-12);
        assert!((grad[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let g = BnGeom { batch: 4, channels: 2, spatial: 1 };
        let x = [1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let out = batchnorm_forward_train(&x, &g, &[1.0, 1.0], &[0.0, 0.0]);
        let m0: f64 = (0..4).map(|b| out.y[b * 2]).sum::<f64>() / 4.0;
        assert!(m0.abs() < 1e-12);
        assert!((out.mean[1] - 25.0).abs() < 1e-12);
    }
}
