//! Dense row-major `f64` tensors and the handful of kernels the encoder and
//! heads need, each with a hand-written backward pass.
//!
//! Matrices used as `x · W` are stored `in × out`; classifier heads are stored
//! one row per class (`classes × in`).

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Uniform in `[-limit, limit]`.
    pub fn uniform<R: Rng>(shape: &[usize], limit: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-limit..=limit)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Glorot-style uniform initialisation for a `fan_in × fan_out` map.
    pub fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Tensor::uniform(shape, limit, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x · w + b` for `x: n × in`, `w: in × out`.
pub fn linear(x: &[f64], w: &[f64], b: &[f64], n: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * d_in);
    debug_assert_eq!(w.len(), d_in * d_out);
    let mut y = Vec::with_capacity(n * d_out);
    for i in 0..n {
        y.extend_from_slice(b);
        let yi = &mut y[i * d_out..(i + 1) * d_out];
        for (k, &xk) in x[i * d_in..(i + 1) * d_in].iter().enumerate() {
            if xk != 0.0 {
                axpy(xk, &w[k * d_out..(k + 1) * d_out], yi);
            }
        }
    }
    y
}

/// Backward of [`linear`]: accumulates into `dx`, `dw`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    d_in: usize,
    d_out: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    for i in 0..n {
        let dyi = &dy[i * d_out..(i + 1) * d_out];
        axpy(1.0, dyi, db);
        let xi = &x[i * d_in..(i + 1) * d_in];
        let dxi = &mut dx[i * d_in..(i + 1) * d_in];
        for k in 0..d_in {
            let wk = &w[k * d_out..(k + 1) * d_out];
            dxi[k] += dot(dyi, wk);
            if xi[k] != 0.0 {
                axpy(xi[k], dyi, &mut dw[k * d_out..(k + 1) * d_out]);
            }
        }
    }
}

/// Class logits `W h + b` for a head stored one row per class.
pub fn head_logits(w: &Tensor, b: &Tensor, h: &[f64]) -> Vec<f64> {
    (0..w.shape()[0])
        .map(|c| dot(w.row(c), h) + b.data()[c])
        .collect()
}

/// Backward of [`head_logits`]; accumulates into `dw`, `db`, `dh`.
pub fn head_logits_backward(
    w: &Tensor,
    h: &[f64],
    dlogits: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
    dh: &mut [f64],
) {
    for (c, &g) in dlogits.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db.data_mut()[c] += g;
        axpy(g, h, dw.row_mut(c));
        axpy(g, w.row(c), dh);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Per-row layer normalisation. Returns `(y, x_hat, inv_std)`.
pub fn layer_norm(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    n: usize,
    d: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; n * d];
    let mut x_hat = vec![0.0; n * d];
    let mut inv_std = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = inv;
        for j in 0..d {
            let xh = (row[j] - mean) * inv;
            x_hat[i * d + j] = xh;
            y[i * d + j] = xh * gain[j] + bias[j];
        }
    }
    (y, x_hat, inv_std)
}

/// Backward of [`layer_norm`]; accumulates into `dx`, `dgain`, `dbias`.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward(
    dy: &[f64],
    x_hat: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    n: usize,
    d: usize,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let mut dxh = vec![0.0; d];
    for i in 0..n {
        let dyi = &dy[i * d..(i + 1) * d];
        let xhi = &x_hat[i * d..(i + 1) * d];
        for j in 0..d {
            dgain[j] += dyi[j] * xhi[j];
            dbias[j] += dyi[j];
            dxh[j] = dyi[j] * gain[j];
        }
        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
        let mean_dxh_xh = dot(&dxh, xhi) / d as f64;
        let dxi = &mut dx[i * d..(i + 1) * d];
        for j in 0..d {
            dxi[j] += inv_std[i] * (dxh[j] - mean_dxh - xhi[j] * mean_dxh_xh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Softmax cross-entropy of `target`. Returns `(loss, probabilities)`; the
/// gradient w.r.t. the logits is `probs - onehot(target)`.
pub fn cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[target];
    let probs = logits.iter().map(|z| (z - log_sum).exp()).collect();
    (loss, probs)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
