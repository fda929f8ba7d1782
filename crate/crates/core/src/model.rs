//! The stand-in policy network: a two-layer tanh encoder over
//! (input features, instruction one-hot) producing a latent vector, and a
//! linear decoder mapping the latent to an action prediction.
//!
//! Parameters live in one flat vector with a layout descriptor so that
//! server-side aggregation can treat the model as ordinary numerics while
//! local training still applies distinct encoder/decoder learning rates.
//! All gradients are exact analytic backpropagation; everything is smooth
//! (tanh + linear), which the convergence diagnostics rely on.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledSample;
use crate::error::{Error, Result};
use crate::rng;

/// Shape descriptor for the flat parameter vector.
///
/// Block order: enc_w1, enc_b1, enc_w2, enc_b2, dec_w, dec_b.
/// Matrices are row-major `out x in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub in_dim: usize,
    pub num_tasks: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub act_dim: usize,
}

impl Layout {
    pub fn new(
        in_dim: usize,
        num_tasks: usize,
        hidden_dim: usize,
        latent_dim: usize,
        act_dim: usize,
    ) -> Result<Layout> {
        if in_dim == 0 || num_tasks == 0 || hidden_dim == 0 || latent_dim == 0 || act_dim == 0 {
            return Err(Error::InvalidConfig(
                "all model dimensions must be >= 1".into(),
            ));
        }
        Ok(Layout {
            in_dim,
            num_tasks,
            hidden_dim,
            latent_dim,
            act_dim,
        })
    }

    /// Width of the encoder input: features plus instruction one-hot.
    pub fn input_width(&self) -> usize {
        self.in_dim + self.num_tasks
    }

    pub fn enc_w1_offset(&self) -> usize {
        0
    }
    pub fn enc_w1_len(&self) -> usize {
        self.hidden_dim * self.input_width()
    }
    pub fn enc_b1_offset(&self) -> usize {
        self.enc_w1_offset() + self.enc_w1_len()
    }
    pub fn enc_b1_len(&self) -> usize {
        self.hidden_dim
    }
    pub fn enc_w2_offset(&self) -> usize {
        self.enc_b1_offset() + self.enc_b1_len()
    }
    pub fn enc_w2_len(&self) -> usize {
        self.latent_dim * self.hidden_dim
    }
    pub fn enc_b2_offset(&self) -> usize {
        self.enc_w2_offset() + self.enc_w2_len()
    }
    pub fn enc_b2_len(&self) -> usize {
        self.latent_dim
    }
    pub fn dec_w_offset(&self) -> usize {
        self.enc_b2_offset() + self.enc_b2_len()
    }
    pub fn dec_w_len(&self) -> usize {
        self.act_dim * self.latent_dim
    }
    pub fn dec_b_offset(&self) -> usize {
        self.dec_w_offset() + self.dec_w_len()
    }
    pub fn dec_b_len(&self) -> usize {
        self.act_dim
    }

    pub fn total_len(&self) -> usize {
        self.dec_b_offset() + self.dec_b_len()
    }

    /// Encoder segment: both encoder layers.
    pub fn encoder_range(&self) -> Range<usize> {
        0..self.dec_w_offset()
    }

    /// Decoder segment: the final linear layer.
    pub fn decoder_range(&self) -> Range<usize> {
        self.dec_w_offset()..self.total_len()
    }
}

/// Flat model parameters plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> ParamVector {
        ParamVector {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn block(&self, offset: usize, len: usize) -> &[f64] {
        &self.values[offset..offset + len]
    }

    pub fn enc_w1(&self) -> &[f64] {
        self.block(self.layout.enc_w1_offset(), self.layout.enc_w1_len())
    }
    pub fn enc_b1(&self) -> &[f64] {
        self.block(self.layout.enc_b1_offset(), self.layout.enc_b1_len())
    }
    pub fn enc_w2(&self) -> &[f64] {
        self.block(self.layout.enc_w2_offset(), self.layout.enc_w2_len())
    }
    pub fn enc_b2(&self) -> &[f64] {
        self.block(self.layout.enc_b2_offset(), self.layout.enc_b2_len())
    }
    pub fn dec_w(&self) -> &[f64] {
        self.block(self.layout.dec_w_offset(), self.layout.dec_w_len())
    }
    pub fn dec_b(&self) -> &[f64] {
        self.block(self.layout.dec_b_offset(), self.layout.dec_b_len())
    }
}

/// Initialize parameters with per-layer std 1/sqrt(fan_in) gaussian weights
/// and zero biases. Deterministic in `seed`.
pub fn init_params(
    in_dim: usize,
    num_tasks: usize,
    hidden_dim: usize,
    latent_dim: usize,
    act_dim: usize,
    seed: u64,
) -> Result<ParamVector> {
    let layout = Layout::new(in_dim, num_tasks, hidden_dim, latent_dim, act_dim)?;
    let mut params = ParamVector::zeros(layout);
    let mut rng = rng::stream(seed);
    let mut fill = |offset: usize, len: usize, fan_in: usize| {
        let std = 1.0 / (fan_in as f64).sqrt();
        for v in &mut params.values[offset..offset + len] {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
    };
    fill(layout.enc_w1_offset(), layout.enc_w1_len(), layout.input_width());
    fill(layout.enc_w2_offset(), layout.enc_w2_len(), layout.hidden_dim);
    fill(layout.dec_w_offset(), layout.dec_w_len(), layout.latent_dim);
    Ok(params)
}

/// Per-sample forward activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// concat(x, one_hot(instr))
    pub input: Vec<f64>,
    /// tanh activations of the first encoder layer
    pub hidden: Vec<f64>,
    /// latent z (second encoder layer, linear)
    pub latent: Vec<f64>,
    /// decoder output
    pub output: Vec<f64>,
}

fn matvec(w: &[f64], x: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    (0..out_dim)
        .map(|row| {
            b[row]
                + w[row * in_dim..(row + 1) * in_dim]
                    .iter()
                    .zip(x)
                    .map(|(wi, xi)| wi * xi)
                    .sum::<f64>()
        })
        .collect()
}

fn build_input(layout: &Layout, x: &[f64], instr: usize) -> Result<Vec<f64>> {
    if instr >= layout.num_tasks {
        return Err(Error::Domain(format!(
            "instruction index {instr} outside [0, {})",
            layout.num_tasks
        )));
    }
    if x.len() != layout.in_dim {
        return Err(Error::Domain(format!(
            "input has {} features, model expects {}",
            x.len(),
            layout.in_dim
        )));
    }
    let mut input = vec![0.0; layout.input_width()];
    input[..layout.in_dim].copy_from_slice(x);
    input[layout.in_dim + instr] = 1.0;
    Ok(input)
}

/// Encoder forward: z = W2 tanh(W1 [x; one_hot] + b1) + b2.
pub fn encode(params: &ParamVector, x: &[f64], instr: usize) -> Result<Vec<f64>> {
    Ok(forward(params, x, instr)?.latent)
}

/// Decoder forward: linear map from latent to action prediction.
pub fn decode(params: &ParamVector, z: &[f64]) -> Result<Vec<f64>> {
    let layout = &params.layout;
    if z.len() != layout.latent_dim {
        return Err(Error::Domain(format!(
            "latent has dim {}, model expects {}",
            z.len(),
            layout.latent_dim
        )));
    }
    Ok(matvec(params.dec_w(), z, params.dec_b(), layout.act_dim))
}

/// Full forward pass with cached activations.
pub fn forward(params: &ParamVector, x: &[f64], instr: usize) -> Result<ForwardCache> {
    let layout = &params.layout;
    let input = build_input(layout, x, instr)?;
    let mut hidden = matvec(params.enc_w1(), &input, params.enc_b1(), layout.hidden_dim);
    for h in &mut hidden {
        *h = h.tanh();
    }
    let latent = matvec(params.enc_w2(), &hidden, params.enc_b2(), layout.latent_dim);
    let output = matvec(params.dec_w(), &latent, params.dec_b(), layout.act_dim);
    Ok(ForwardCache {
        input,
        hidden,
        latent,
        output,
    })
}

/// Accumulate one sample's gradient into `grad`.
///
/// `d_output` is the loss gradient at the decoder output; `d_latent_extra`
/// is an additional gradient injected directly at the latent (the
/// contrastive term), either empty or `latent_dim` long.
pub fn backward_into(
    params: &ParamVector,
    cache: &ForwardCache,
    d_output: &[f64],
    d_latent_extra: &[f64],
    grad: &mut ParamVector,
) {
    let layout = &params.layout;
    debug_assert_eq!(grad.layout, *layout);
    debug_assert_eq!(d_output.len(), layout.act_dim);

    // Decoder: d_latent = dec_w^T d_output, plus the injected latent term.
    let mut d_latent = vec![0.0; layout.latent_dim];
    if !d_latent_extra.is_empty() {
        debug_assert_eq!(d_latent_extra.len(), layout.latent_dim);
        d_latent.copy_from_slice(d_latent_extra);
    }
    {
        let dec_w = params.dec_w();
        let gw = layout.dec_w_offset();
        let gb = layout.dec_b_offset();
        for row in 0..layout.act_dim {
            let g = d_output[row];
            if g != 0.0 {
                for col in 0..layout.latent_dim {
                    grad.values[gw + row * layout.latent_dim + col] += g * cache.latent[col];
                    d_latent[col] += dec_w[row * layout.latent_dim + col] * g;
                }
                grad.values[gb + row] += g;
            }
        }
    }

    // Second encoder layer (linear): d_hidden = enc_w2^T d_latent.
    let mut d_hidden = vec![0.0; layout.hidden_dim];
    {
        let enc_w2 = params.enc_w2();
        let gw = layout.enc_w2_offset();
        let gb = layout.enc_b2_offset();
        for row in 0..layout.latent_dim {
            let g = d_latent[row];
            if g != 0.0 {
                for col in 0..layout.hidden_dim {
                    grad.values[gw + row * layout.hidden_dim + col] += g * cache.hidden[col];
                    d_hidden[col] += enc_w2[row * layout.hidden_dim + col] * g;
                }
                grad.values[gb + row] += g;
            }
        }
    }

    // First encoder layer through tanh: d_pre = d_hidden * (1 - h^2).
    {
        let gw = layout.enc_w1_offset();
        let gb = layout.enc_b1_offset();
        let width = layout.input_width();
        for row in 0..layout.hidden_dim {
            let g = d_hidden[row] * (1.0 - cache.hidden[row] * cache.hidden[row]);
            if g != 0.0 {
                for col in 0..width {
                    grad.values[gw + row * width + col] += g * cache.input[col];
                }
                grad.values[gb + row] += g;
            }
        }
    }
}

/// Pick the instruction index for a sample: the predicted label when
/// `use_predicted_labels` is set, the true task otherwise.
pub fn sample_instruction(sample: &LabeledSample, use_predicted_labels: bool) -> Result<usize> {
    if use_predicted_labels {
        sample.t_hat.ok_or_else(|| {
            Error::DataIntegrity("sample has no predicted label; annotate the dataset first".into())
        })
    } else {
        Ok(sample.t)
    }
}

/// Mean squared-error task loss over a batch with its exact gradient:
/// loss = (1/K) sum_k 0.5 ||f(x_k, instr_k) - a_k||^2.
pub fn task_loss_and_grad(
    params: &ParamVector,
    batch: &[LabeledSample],
    use_predicted_labels: bool,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Domain("task loss over an empty batch".into()));
    }
    let inv_k = 1.0 / batch.len() as f64;
    let mut grad = ParamVector::zeros(params.layout);
    let mut loss = 0.0;
    for sample in batch {
        let instr = sample_instruction(sample, use_predicted_labels)?;
        let cache = forward(params, &sample.x, instr)?;
        let mut d_out = vec![0.0; params.layout.act_dim];
        for (i, d) in d_out.iter_mut().enumerate() {
            let resid = cache.output[i] - sample.a[i];
            loss += 0.5 * resid * resid * inv_k;
            *d = resid * inv_k;
        }
        backward_into(params, &cache, &d_out, &[], &mut grad);
    }
    Ok((loss, grad))
}

/// Singularity-free normalization: z / sqrt(||z||^2 + eps^2).
///
/// Output norm is strictly below 1 for finite inputs and approaches 1 as
/// ||z|| grows; the zero vector maps to itself.
pub fn smooth_normalize(z: &[f64], eps_n: f64) -> Result<Vec<f64>> {
    if !(eps_n > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "smoothing epsilon must be > 0, got {eps_n}"
        )));
    }
    let sq: f64 = z.iter().map(|v| v * v).sum();
    let scale = 1.0 / (sq + eps_n * eps_n).sqrt();
    Ok(z.iter().map(|v| v * scale).collect())
}
