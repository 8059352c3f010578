use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use crate::dataset::TrajectoryWindow;
use crate::error::{Error, Result};

/// Planar coordinates per time step.
pub const FEATURES: usize = 2;

/// A single sequence, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensor {
    pub data: Mat,
}

impl SequenceTensor {
    pub fn from_points(points: &[(f64, f64)]) -> Self {
        Self { data: Mat::from_fn(points.len(), FEATURES, |t, f| if f == 0 { points[t].0 } else { points[t].1 }) }
    }

    pub fn to_points(&self) -> Vec<(f64, f64)> {
        self.data.row_iter().map(|r| (r[0], r[1])).collect()
    }

    pub fn steps(&self) -> usize {
        self.data.nrows()
    }

    pub fn features(&self) -> usize {
        self.data.ncols()
    }
}

/// Packs sequences of equal length into per-step `features x batch` matrices.
pub fn to_batch(seqs: &[&SequenceTensor]) -> Vec<Mat> {
    let steps = seqs.first().map_or(0, |s| s.steps());
    (0..steps)
        .map(|t| {
            let f = seqs[0].features();
            Mat::from_fn(f, seqs.len(), |i, b| seqs[b].data[(t, i)])
        })
        .collect()
}

/// Inverse of [`to_batch`].
pub fn from_batch(steps: &[Mat]) -> Vec<SequenceTensor> {
    let batch = steps.first().map_or(0, Mat::ncols);
    (0..batch)
        .map(|b| SequenceTensor {
            data: Mat::from_fn(steps.len(), steps[0].nrows(), |t, i| steps[t][(i, b)]),
        })
        .collect()
}

/// Layer sizes and normalization choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder_hidden: usize,
    pub latent: usize,
    pub decoder_hidden: usize,
    pub input_norm: NormKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { encoder_hidden: 64, latent: 64, decoder_hidden: 128, input_norm: NormKind::Standardize }
    }
}

/// Encoder-decoder weights:
/// input norm -> GRU -> layer norm -> dense + ReLU -> GRU -> dense.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_norm: NormParams,
    pub encoder: GruParams,
    pub encoder_norm: NormParams,
    pub latent: DenseParams,
    pub decoder: GruParams,
    pub output: DenseParams,
}

/// Mean and standard deviation of each history coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputStats {
    pub mean: [f64; FEATURES],
    pub std: [f64; FEATURES],
}

impl Default for InputStats {
    fn default() -> Self {
        Self { mean: [0.0; FEATURES], std: [1.0; FEATURES] }
    }
}

impl InputStats {
    pub fn from_windows(windows: &[TrajectoryWindow]) -> Self {
        let n = windows.iter().map(|w| w.history.len()).sum::<usize>().max(1) as f64;
        let mut mean = [0.0; FEATURES];
        for &(x, y) in windows.iter().flat_map(|w| &w.history) {
            mean[0] += x;
            mean[1] += y;
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; FEATURES];
        for &(x, y) in windows.iter().flat_map(|w| &w.history) {
            var[0] += (x - mean[0]).powi(2);
            var[1] += (y - mean[1]).powi(2);
        }
        let std = var.map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Self { mean, std }
    }
}

impl ModelParams {
    /// Seeded initialization, uniform in `+-sqrt(1/fan_in)` per tensor.
    pub fn init(config: &ModelConfig, stats: &InputStats, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input_norm = match config.input_norm {
            NormKind::Layer => NormParams::layer(FEATURES),
            NormKind::Standardize => NormParams::standardize(&stats.mean, &stats.std),
        };
        Self {
            input_norm,
            encoder: GruParams::init(FEATURES, config.encoder_hidden, &mut rng),
            encoder_norm: NormParams::layer(config.encoder_hidden),
            latent: DenseParams::init(config.encoder_hidden, config.latent, &mut rng),
            decoder: GruParams::init(config.latent, config.decoder_hidden, &mut rng),
            output: DenseParams::init(config.decoder_hidden, FEATURES, &mut rng),
        }
    }

    /// All learnable tensors zeroed; normalization settings copied.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            encoder_hidden: self.encoder.hidden_size(),
            latent: self.latent.weights.nrows(),
            decoder_hidden: self.decoder.hidden_size(),
            input_norm: self.input_norm.kind,
        }
    }

    /// Learnable tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        vec![
            ("input_norm.scale", &self.input_norm.scale),
            ("input_norm.offset", &self.input_norm.offset),
            ("encoder.input_weights", &self.encoder.input_weights),
            ("encoder.recurrent_weights", &self.encoder.recurrent_weights),
            ("encoder.biases", &self.encoder.biases),
            ("encoder_norm.scale", &self.encoder_norm.scale),
            ("encoder_norm.offset", &self.encoder_norm.offset),
            ("latent.weights", &self.latent.weights),
            ("latent.biases", &self.latent.biases),
            ("decoder.input_weights", &self.decoder.input_weights),
            ("decoder.recurrent_weights", &self.decoder.recurrent_weights),
            ("decoder.biases", &self.decoder.biases),
            ("output.weights", &self.output.weights),
            ("output.biases", &self.output.biases),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        vec![
            ("input_norm.scale", &mut self.input_norm.scale),
            ("input_norm.offset", &mut self.input_norm.offset),
            ("encoder.input_weights", &mut self.encoder.input_weights),
            ("encoder.recurrent_weights", &mut self.encoder.recurrent_weights),
            ("encoder.biases", &mut self.encoder.biases),
            ("encoder_norm.scale", &mut self.encoder_norm.scale),
            ("encoder_norm.offset", &mut self.encoder_norm.offset),
            ("latent.weights", &mut self.latent.weights),
            ("latent.biases", &mut self.latent.biases),
            ("decoder.input_weights", &mut self.decoder.input_weights),
            ("decoder.recurrent_weights", &mut self.decoder.recurrent_weights),
            ("decoder.biases", &mut self.decoder.biases),
            ("output.weights", &mut self.output.weights),
            ("output.biases", &mut self.output.biases),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn forward_batch(&self, xs: &[Mat]) -> (Vec<Mat>, ForwardCache) {
        let batch = xs.first().map_or(0, Mat::ncols);
        let (normed, input_cache): (Vec<_>, Vec<_>) = xs.iter().map(|x| norm_forward(&self.input_norm, x)).unzip();
        let h0 = Mat::zeros(self.encoder.hidden_size(), batch);
        let (encoded, encoder_cache) = gru_forward_batch(&self.encoder, &normed, &h0);
        let (enc_normed, enc_norm_cache): (Vec<_>, Vec<_>) =
            encoded.iter().map(|h| norm_forward(&self.encoder_norm, h)).unzip();
        let latent_pre: Vec<Mat> = enc_normed.iter().map(|h| dense_forward(&self.latent, h)).collect();
        let latent: Vec<Mat> = latent_pre.iter().map(relu_forward).collect();
        let h0 = Mat::zeros(self.decoder.hidden_size(), batch);
        let (decoded, decoder_cache) = gru_forward_batch(&self.decoder, &latent, &h0);
        let outputs = decoded.iter().map(|h| dense_forward(&self.output, h)).collect();
        let cache = ForwardCache {
            input_cache,
            encoder_cache,
            enc_norm_cache,
            enc_normed,
            latent_pre,
            decoder_cache,
            decoded,
        };
        (outputs, cache)
    }

    /// Gradients of the loss given `dL/d output` at every step.
    pub fn backward_batch(&self, cache: &ForwardCache, d_outputs: &[Mat]) -> ModelParams {
        let mut g = self.zeros_like();
        let d_decoded: Vec<Mat> = d_outputs
            .iter()
            .zip(&cache.decoded)
            .map(|(dy, h)| dense_backward(&self.output, h, dy, &mut g.output))
            .collect();
        let d_latent = gru_backward_batch(&self.decoder, &cache.decoder_cache, &d_decoded, &mut g.decoder);
        let d_enc_normed: Vec<Mat> = d_latent
            .iter()
            .zip(&cache.latent_pre)
            .zip(&cache.enc_normed)
            .map(|((d, pre), x)| dense_backward(&self.latent, x, &relu_backward(pre, d), &mut g.latent))
            .collect();
        let d_encoded: Vec<Mat> = d_enc_normed
            .iter()
            .zip(&cache.enc_norm_cache)
            .map(|(d, c)| norm_backward(&self.encoder_norm, c, d, &mut g.encoder_norm))
            .collect();
        let d_normed = gru_backward_batch(&self.encoder, &cache.encoder_cache, &d_encoded, &mut g.encoder);
        for (d, c) in d_normed.iter().zip(&cache.input_cache) {
            norm_backward(&self.input_norm, c, d, &mut g.input_norm);
        }
        g
    }

    pub fn predict_batch(&self, histories: &[&SequenceTensor]) -> Vec<SequenceTensor> {
        from_batch(&self.forward_batch(&to_batch(histories)).0)
    }
}

/// Intermediate activations of [`ModelParams::forward_batch`].
pub struct ForwardCache {
    input_cache: Vec<NormCache>,
    encoder_cache: GruCache,
    enc_norm_cache: Vec<NormCache>,
    enc_normed: Vec<Mat>,
    latent_pre: Vec<Mat>,
    decoder_cache: GruCache,
    decoded: Vec<Mat>,
}

/// Runs the full network over one history; output has the same length.
pub fn model_forward(model: &ModelParams, history: &SequenceTensor) -> SequenceTensor {
    model.predict_batch(&[history]).remove(0)
}

/// Single-sequence GRU pass returning every hidden state (`M x H`).
pub fn gru_forward(params: &GruParams, inputs: &SequenceTensor, h0: &[f64]) -> SequenceTensor {
    let h0 = Mat::from_column_slice(params.hidden_size(), 1, h0);
    let (hs, _) = gru_forward_batch(params, &to_batch(&[inputs]), &h0);
    from_batch(&hs).remove(0)
}

/// Normalizes one feature vector.
pub fn layer_norm(params: &NormParams, vec: &[f64]) -> Vec<f64> {
    let (out, _) = norm_forward(params, &Mat::from_column_slice(vec.len(), 1, vec));
    out.column(0).iter().copied().collect()
}

fn check_shapes(pred: &SequenceTensor, truth: &SequenceTensor) -> Result<()> {
    if pred.data.shape() != truth.data.shape() {
        return Err(Error::ShapeMismatch {
            name: "prediction".into(),
            expected: format!("{:?}", truth.data.shape()),
            found: format!("{:?}", pred.data.shape()),
        });
    }
    Ok(())
}

/// Mean of squared element-wise errors over every coordinate.
pub fn mse_loss(pred: &SequenceTensor, truth: &SequenceTensor) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok((&pred.data - &truth.data).norm_squared() / pred.data.len() as f64)
}

pub fn rmse(pred: &SequenceTensor, truth: &SequenceTensor) -> Result<f64> {
    mse_loss(pred, truth).map(f64::sqrt)
}

/// Pooled RMSE: root of the element-count-weighted mean of per-pair MSEs.
pub fn batch_rmse(pairs: &[(&SequenceTensor, &SequenceTensor)]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pairs {
        sum += mse_loss(p, t)? * p.data.len() as f64;
        count += p.data.len();
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((sum / count as f64).sqrt())
}

/// Batch-mean MSE and its gradient with respect to every learnable tensor.
pub fn loss_and_gradients(
    model: &ModelParams,
    batch: &[(&SequenceTensor, &SequenceTensor)],
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let histories: Vec<_> = batch.iter().map(|(h, _)| *h).collect();
    let futures: Vec<_> = batch.iter().map(|(_, f)| *f).collect();
    for (h, f) in &batch[1..] {
        check_shapes(h, histories[0])?;
        check_shapes(f, futures[0])?;
    }
    let xs = to_batch(&histories);
    let targets = to_batch(&futures);
    let (outputs, cache) = model.forward_batch(&xs);
    if outputs.len() != targets.len() || outputs.first().map(Mat::nrows) != targets.first().map(Mat::nrows) {
        return Err(Error::ShapeMismatch {
            name: "target".into(),
            expected: format!("{} steps of {} features", outputs.len(), FEATURES),
            found: format!("{} steps", targets.len()),
        });
    }
    let count = (outputs.len() * FEATURES * batch.len()) as f64;
    let mut sse = 0.0;
    let d_outputs: Vec<Mat> = outputs
        .iter()
        .zip(&targets)
        .map(|(y, t)| {
            let r = y - t;
            sse += r.norm_squared();
            r * (2.0 / count)
        })
        .collect();
    Ok((sse / count, model.backward_batch(&cache, &d_outputs)))
}

/// Gradient of the batch-mean MSE.
pub fn loss_gradients(model: &ModelParams, batch: &[(&SequenceTensor, &SequenceTensor)]) -> Result<ModelParams> {
    loss_and_gradients(model, batch).map(|(_, g)| g)
}
