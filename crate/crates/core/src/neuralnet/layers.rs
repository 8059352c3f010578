//! Batched layer kernels. A batch at one time step is a matrix with one
//! column per sample; a sequence is a `Vec` of such matrices.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Mat = DMatrix<f64>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

fn add_column_bias(m: &mut Mat, bias: &Mat) {
    for mut col in m.column_iter_mut() {
        col += bias.column(0);
    }
}

fn accumulate_outer(acc: &mut Mat, a: &Mat, b: &Mat) {
    // acc += a * b^T
    acc.gemm(1.0, a, &b.transpose(), 1.0);
}

fn accumulate_row_sums(acc: &mut Mat, m: &Mat) {
    for col in m.column_iter() {
        acc.column_mut(0).axpy(1.0, &col, 1.0);
    }
}

/// Gated recurrent unit. Gate blocks are stacked `[update; reset; candidate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `3H x F`
    pub input_weights: Mat,
    /// `3H x H`
    pub recurrent_weights: Mat,
    /// `3H x 1`
    pub biases: Mat,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input_weights: Mat::zeros(3 * hidden, input),
            recurrent_weights: Mat::zeros(3 * hidden, hidden),
            biases: Mat::zeros(3 * hidden, 1),
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bi = (1.0 / input as f64).sqrt();
        let bh = (1.0 / hidden as f64).sqrt();
        Self {
            input_weights: uniform(3 * hidden, input, bi, rng),
            recurrent_weights: uniform(3 * hidden, hidden, bh, rng),
            biases: uniform(3 * hidden, 1, bi, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.recurrent_weights.ncols()
    }

    pub fn input_size(&self) -> usize {
        self.input_weights.ncols()
    }
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct GruCache {
    inputs: Vec<Mat>,
    prev: Vec<Mat>,
    update: Vec<Mat>,
    reset: Vec<Mat>,
    candidate: Vec<Mat>,
    /// `R_h h` before the reset gate is applied.
    recurrent_candidate: Vec<Mat>,
}

pub fn gru_forward_batch(p: &GruParams, xs: &[Mat], h0: &Mat) -> (Vec<Mat>, GruCache) {
    let hid = p.hidden_size();
    let batch = h0.ncols();
    let mut cache = GruCache::default();
    let mut outputs = Vec::with_capacity(xs.len());
    let mut h = h0.clone();
    for x in xs {
        let mut gx = &p.input_weights * x;
        add_column_bias(&mut gx, &p.biases);
        let gh = &p.recurrent_weights * &h;

        let mut z = Mat::zeros(hid, batch);
        let mut r = Mat::zeros(hid, batch);
        let mut n = Mat::zeros(hid, batch);
        let mut rn = Mat::zeros(hid, batch);
        let mut next = Mat::zeros(hid, batch);
        for b in 0..batch {
            for j in 0..hid {
                let zj = sigmoid(gx[(j, b)] + gh[(j, b)]);
                let rj = sigmoid(gx[(hid + j, b)] + gh[(hid + j, b)]);
                let ghn = gh[(2 * hid + j, b)];
                let nj = (gx[(2 * hid + j, b)] + rj * ghn).tanh();
                z[(j, b)] = zj;
                r[(j, b)] = rj;
                n[(j, b)] = nj;
                rn[(j, b)] = ghn;
                next[(j, b)] = (1.0 - zj) * nj + zj * h[(j, b)];
            }
        }
        cache.inputs.push(x.clone());
        cache.prev.push(std::mem::replace(&mut h, next.clone()));
        cache.update.push(z);
        cache.reset.push(r);
        cache.candidate.push(n);
        cache.recurrent_candidate.push(rn);
        outputs.push(next);
    }
    (outputs, cache)
}

/// Backpropagation through time. `dhs[t]` is the loss gradient arriving at
/// output `t` from above; returns the gradient with respect to each input.
pub fn gru_backward_batch(p: &GruParams, cache: &GruCache, dhs: &[Mat], grads: &mut GruParams) -> Vec<Mat> {
    let hid = p.hidden_size();
    let steps = cache.inputs.len();
    let batch = dhs.first().map_or(0, Mat::ncols);
    let mut dxs = vec![Mat::zeros(0, 0); steps];
    let mut carry = Mat::zeros(hid, batch);
    let mut dgx = Mat::zeros(3 * hid, batch);
    let mut dgh = Mat::zeros(3 * hid, batch);
    for t in (0..steps).rev() {
        let (z, r, n) = (&cache.update[t], &cache.reset[t], &cache.candidate[t]);
        let (hp, ghn) = (&cache.prev[t], &cache.recurrent_candidate[t]);
        let mut direct = Mat::zeros(hid, batch);
        for b in 0..batch {
            for j in 0..hid {
                let dh = dhs[t][(j, b)] + carry[(j, b)];
                let (zj, rj, nj) = (z[(j, b)], r[(j, b)], n[(j, b)]);
                let dn = dh * (1.0 - zj);
                let dz = dh * (hp[(j, b)] - nj);
                direct[(j, b)] = dh * zj;
                let dan = dn * (1.0 - nj * nj);
                let dr = dan * ghn[(j, b)];
                let daz = dz * zj * (1.0 - zj);
                let dar = dr * rj * (1.0 - rj);
                dgx[(j, b)] = daz;
                dgx[(hid + j, b)] = dar;
                dgx[(2 * hid + j, b)] = dan;
                dgh[(j, b)] = daz;
                dgh[(hid + j, b)] = dar;
                dgh[(2 * hid + j, b)] = dan * rj;
            }
        }
        accumulate_outer(&mut grads.input_weights, &dgx, &cache.inputs[t]);
        accumulate_outer(&mut grads.recurrent_weights, &dgh, hp);
        accumulate_row_sums(&mut grads.biases, &dgx);
        dxs[t] = p.input_weights.tr_mul(&dgx);
        carry = p.recurrent_weights.tr_mul(&dgh) + direct;
    }
    dxs
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `out x in`
    pub weights: Mat,
    /// `out x 1`
    pub biases: Mat,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weights: Mat::zeros(output, input), biases: Mat::zeros(output, 1) }
    }

    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / input as f64).sqrt();
        Self { weights: uniform(output, input, bound, rng), biases: uniform(output, 1, bound, rng) }
    }
}

pub fn dense_forward(p: &DenseParams, x: &Mat) -> Mat {
    let mut y = &p.weights * x;
    add_column_bias(&mut y, &p.biases);
    y
}

/// Accumulates parameter gradients and returns `dL/dx`.
pub fn dense_backward(p: &DenseParams, x: &Mat, dy: &Mat, grads: &mut DenseParams) -> Mat {
    accumulate_outer(&mut grads.weights, dy, x);
    accumulate_row_sums(&mut grads.biases, dy);
    p.weights.tr_mul(dy)
}

/// How a normalization layer standardizes its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Per-sample standardization across features.
    #[default]
    Layer,
    /// Per-feature standardization with fixed statistics from the training set.
    Standardize,
}

/// Normalization followed by a learnable per-feature affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub kind: NormKind,
    pub scale: Mat,
    pub offset: Mat,
    pub epsilon: f64,
    /// Fixed feature means; used by [`NormKind::Standardize`] only.
    pub mean: Mat,
    /// Fixed feature standard deviations; used by [`NormKind::Standardize`] only.
    pub std: Mat,
}

pub const NORM_EPSILON: f64 = 1e-5;

impl NormParams {
    pub fn layer(features: usize) -> Self {
        Self {
            kind: NormKind::Layer,
            scale: Mat::from_element(features, 1, 1.0),
            offset: Mat::zeros(features, 1),
            epsilon: NORM_EPSILON,
            mean: Mat::zeros(features, 1),
            std: Mat::from_element(features, 1, 1.0),
        }
    }

    pub fn standardize(mean: &[f64], std: &[f64]) -> Self {
        let f = mean.len();
        Self {
            kind: NormKind::Standardize,
            mean: Mat::from_column_slice(f, 1, mean),
            std: Mat::from_column_slice(f, 1, std),
            ..Self::layer(f)
        }
    }

    pub fn features(&self) -> usize {
        self.scale.nrows()
    }
}

/// Normalized activations before the affine map, plus per-column inverse
/// standard deviations for [`NormKind::Layer`].
#[derive(Debug, Clone)]
pub struct NormCache {
    normalized: Mat,
    inv_std: Vec<f64>,
}

pub fn norm_forward(p: &NormParams, x: &Mat) -> (Mat, NormCache) {
    let (f, batch) = x.shape();
    let mut normalized = Mat::zeros(f, batch);
    let mut inv_std = Vec::new();
    match p.kind {
        NormKind::Layer => {
            inv_std.reserve(batch);
            for (b, col) in x.column_iter().enumerate() {
                let mean = col.mean();
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
                let inv = 1.0 / (var + p.epsilon).sqrt();
                for i in 0..f {
                    normalized[(i, b)] = (col[i] - mean) * inv;
                }
                inv_std.push(inv);
            }
        }
        NormKind::Standardize => {
            for b in 0..batch {
                for i in 0..f {
                    normalized[(i, b)] = (x[(i, b)] - p.mean[i]) / p.std[i];
                }
            }
        }
    }
    let mut out = normalized.clone();
    for b in 0..batch {
        for i in 0..f {
            out[(i, b)] = p.scale[i] * normalized[(i, b)] + p.offset[i];
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Accumulates scale/offset gradients and returns `dL/dx`.
pub fn norm_backward(p: &NormParams, cache: &NormCache, dy: &Mat, grads: &mut NormParams) -> Mat {
    let (f, batch) = dy.shape();
    let xhat = &cache.normalized;
    for b in 0..batch {
        for i in 0..f {
            grads.scale[i] += dy[(i, b)] * xhat[(i, b)];
            grads.offset[i] += dy[(i, b)];
        }
    }
    let mut dx = Mat::zeros(f, batch);
    match p.kind {
        NormKind::Layer => {
            for b in 0..batch {
                let dxhat: Vec<f64> = (0..f).map(|i| dy[(i, b)] * p.scale[i]).collect();
                let mean_d = dxhat.iter().sum::<f64>() / f as f64;
                let mean_dx = (0..f).map(|i| dxhat[i] * xhat[(i, b)]).sum::<f64>() / f as f64;
                for i in 0..f {
                    dx[(i, b)] = cache.inv_std[b] * (dxhat[i] - mean_d - xhat[(i, b)] * mean_dx);
                }
            }
        }
        NormKind::Standardize => {
            for b in 0..batch {
                for i in 0..f {
                    dx[(i, b)] = dy[(i, b)] * p.scale[i] / p.std[i];
                }
            }
        }
    }
    dx
}

pub fn relu_forward(x: &Mat) -> Mat {
    x.map(|v| v.max(0.0))
}

/// `dL/dx` given the pre-activation `x`.
pub fn relu_backward(x: &Mat, dy: &Mat) -> Mat {
    dy.zip_map(x, |d, v| if v > 0.0 { d } else { 0.0 })
}
