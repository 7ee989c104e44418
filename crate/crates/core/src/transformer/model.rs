//! The trajectory predictor: a dense embedding with additive positional
//! encoding, a stack of pre-norm encoder layers (self-attention plus
//! feed-forward, both residual), global average pooling over time, a
//! ReLU dense layer, and a linear 4-feature output. Dropout acts after
//! pooling and after the dense layer, in training mode only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::transformer::dataset::{FeatureRow, NormStats, WindowSample, FEATURES};
use crate::transformer::layers::{
    positional_encoding, AttentionCache, LayerNorm, LayerNormCache, Linear, MultiHeadAttention,
};
use crate::transformer::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Sliding-window length in steps.
    pub window_steps: usize,
    pub heads: usize,
    /// Width of the feed-forward sublayers and of the dense head.
    pub ffn_width: usize,
    pub encoder_layers: usize,
    pub dropout: f64,
    pub input_features: usize,
    pub output_features: usize,
}

impl Default for ModelConfig {
    /// The evaluated six-layer stack: 12-head attention, 64-neuron feed
    /// forward, four encoder layers, 10% dropout, 4 input and output
    /// features.
    fn default() -> Self {
        ModelConfig {
            d_model: 48,
            window_steps: 50,
            heads: 12,
            ffn_width: 64,
            encoder_layers: 4,
            dropout: 0.10,
            input_features: FEATURES,
            output_features: FEATURES,
        }
    }
}

impl ModelConfig {
    /// Reduced configuration for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            window_steps: 4,
            heads: 2,
            ffn_width: 64,
            encoder_layers: 1,
            dropout: 0.10,
            input_features: FEATURES,
            output_features: FEATURES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::config("d_model must be positive and even"));
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.window_steps == 0 {
            return Err(Error::config("window must be at least one step"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if self.input_features == 0 || self.output_features == 0 {
            return Err(Error::config("feature counts must be positive"));
        }
        if self.ffn_width == 0 || self.encoder_layers == 0 {
            return Err(Error::config("ffn width and layer count must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub embed: Linear,
    pub layers: Vec<EncoderLayer>,
    pub head: Linear,
    pub output: Linear,
    /// Precomputed positional encoding for the configured window.
    pos: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct LayerForward {
    x: Tensor,
    ln1: LayerNormCache,
    n1: Tensor,
    attn: AttentionCache,
    a: Tensor,
    ln2: LayerNormCache,
    n2: Tensor,
    h_pre: Tensor,
    h: Tensor,
}

pub struct ForwardCache {
    input: Tensor,
    embedded: Tensor,
    layers: Vec<LayerForward>,
    final_rows: usize,
    pooled: Tensor,
    mask_pool: Option<Vec<f64>>,
    pooled_dropped: Tensor,
    hid_pre: Tensor,
    hid: Tensor,
    mask_hid: Option<Vec<f64>>,
    hid_dropped: Tensor,
    pub output: Tensor,
}

/// Gradients for every parameter tensor, in canonical parameter order.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(model: &TransformerModel) -> Self {
        GradientSet { tensors: model.params().iter().map(|t| Tensor::zeros(t.shape())).collect() }
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::domain("gradient set size mismatch"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.scale(c);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            t.check_finite("gradient")?;
        }
        Ok(())
    }
}

impl TransformerModel {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, norm: NormStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, "model-init", 0);
        let embed = Linear::seeded(config.input_features, config.d_model, &mut r);
        let layers = (0..config.encoder_layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(config.d_model, LAYER_NORM_EPS),
                attn: MultiHeadAttention::seeded(config.d_model, config.heads, &mut r),
                ln2: LayerNorm::new(config.d_model, LAYER_NORM_EPS),
                ff1: Linear::seeded(config.d_model, config.ffn_width, &mut r),
                ff2: Linear::seeded(config.ffn_width, config.d_model, &mut r),
            })
            .collect();
        let head = Linear::seeded(config.d_model, config.ffn_width, &mut r);
        let output = Linear::seeded(config.ffn_width, config.output_features, &mut r);
        let pos = positional_encoding(config.window_steps, config.d_model)?;
        Ok(TransformerModel { config, norm, embed, layers, head, output, pos })
    }

    /// Canonical parameter order used by gradients, the optimizer, and
    /// checkpoints.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["embed.w".to_string(), "embed.b".to_string()];
        for l in 0..self.layers.len() {
            for part in [
                "ln1.gamma", "ln1.beta", "attn.wq", "attn.wk", "attn.wv", "attn.wo",
                "ln2.gamma", "ln2.beta", "ff1.w", "ff1.b", "ff2.w", "ff2.b",
            ] {
                names.push(format!("layer{l}.{part}"));
            }
        }
        names.extend(["head.w".into(), "head.b".into(), "output.w".into(), "output.b".into()]);
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embed.w, &self.embed.b];
        for l in &self.layers {
            out.extend([
                &l.ln1.gamma, &l.ln1.beta, &l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo,
                &l.ln2.gamma, &l.ln2.beta, &l.ff1.w, &l.ff1.b, &l.ff2.w, &l.ff2.b,
            ]);
        }
        out.extend([&self.head.w, &self.head.b, &self.output.w, &self.output.b]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let TransformerModel { embed, layers, head, output, .. } = self;
        let mut out: Vec<&mut Tensor> = vec![&mut embed.w, &mut embed.b];
        for l in layers {
            out.push(&mut l.ln1.gamma);
            out.push(&mut l.ln1.beta);
            out.push(&mut l.attn.wq);
            out.push(&mut l.attn.wk);
            out.push(&mut l.attn.wv);
            out.push(&mut l.attn.wo);
            out.push(&mut l.ln2.gamma);
            out.push(&mut l.ln2.beta);
            out.push(&mut l.ff1.w);
            out.push(&mut l.ff1.b);
            out.push(&mut l.ff2.w);
            out.push(&mut l.ff2.b);
        }
        out.push(&mut head.w);
        out.push(&mut head.b);
        out.push(&mut output.w);
        out.push(&mut output.b);
        out
    }

    fn dropout(
        x: &Tensor,
        p: f64,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Tensor, Option<Vec<f64>>) {
        match (mode, rng) {
            (Mode::Train, Some(rng)) if p > 0.0 => {
                let keep = 1.0 - p;
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mut out = x.clone();
                for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                (out, Some(mask))
            }
            _ => (x.clone(), None),
        }
    }

    /// Runs the stack on a `w x input_features` window and returns the
    /// prediction with the cache needed for the backward pass. Training
    /// mode requires a dropout stream.
    pub fn forward(
        &self,
        input: &Tensor,
        mode: Mode,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardCache> {
        if input.shape() != [self.config.window_steps, self.config.input_features] {
            return Err(Error::domain(format!(
                "input shape {:?} does not match the configured window {:?}",
                input.shape(),
                [self.config.window_steps, self.config.input_features]
            )));
        }
        if mode == Mode::Train && dropout_rng.is_none() && self.config.dropout > 0.0 {
            return Err(Error::config("training mode requires a dropout stream"));
        }

        let mut embedded = self.embed.forward(input)?;
        embedded.add_assign(&self.pos)?;
        embedded.check_finite("embedding")?;

        let mut x = embedded.clone();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (n1, ln1_cache) = layer.ln1.forward(&x);
            let (attn_out, attn_cache) = layer.attn.forward(&n1)?;
            let mut a = x.clone();
            a.add_assign(&attn_out)?;
            let (n2, ln2_cache) = layer.ln2.forward(&a);
            let h_pre = layer.ff1.forward(&n2)?;
            let mut h = h_pre.clone();
            for v in h.data_mut() {
                *v = v.max(0.0);
            }
            let f = layer.ff2.forward(&h)?;
            let mut out = a.clone();
            out.add_assign(&f)?;
            out.check_finite("encoder layer")?;
            layer_caches.push(LayerForward {
                x,
                ln1: ln1_cache,
                n1,
                attn: attn_cache,
                a,
                ln2: ln2_cache,
                n2,
                h_pre,
                h,
            });
            x = out;
        }

        // Global average pooling over time.
        let rows = x.rows();
        let mut pooled = Tensor::zeros(&[1, self.config.d_model]);
        for r in 0..rows {
            for (p, v) in pooled.row_mut(0).iter_mut().zip(x.row(r)) {
                *p += v / rows as f64;
            }
        }
        let (pooled_dropped, mask_pool) =
            Self::dropout(&pooled, self.config.dropout, mode, dropout_rng.as_deref_mut());
        let hid_pre = self.head.forward(&pooled_dropped)?;
        let mut hid = hid_pre.clone();
        for v in hid.data_mut() {
            *v = v.max(0.0);
        }
        let (hid_dropped, mask_hid) =
            Self::dropout(&hid, self.config.dropout, mode, dropout_rng.as_deref_mut());
        let output = self.output.forward(&hid_dropped)?;
        output.check_finite("output")?;

        Ok(ForwardCache {
            input: input.clone(),
            embedded,
            layers: layer_caches,
            final_rows: rows,
            pooled,
            mask_pool,
            pooled_dropped,
            hid_pre,
            hid,
            mask_hid,
            hid_dropped,
            output,
        })
    }

    /// Deterministic inference on one window; returns the normalized
    /// next-step prediction.
    pub fn predict(&self, input: &Tensor) -> Result<FeatureRow> {
        let cache = self.forward(input, Mode::Eval, None)?;
        let mut out = [0.0; FEATURES];
        out.copy_from_slice(cache.output.row(0));
        Ok(out)
    }

    /// Backward pass from the gradient on the output row. Returns
    /// parameter gradients in canonical order plus nothing for the input
    /// (windows are data, not parameters).
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> Result<GradientSet> {
        // Output layer.
        let (grad_hid_dropped, g_out_w, g_out_b) =
            self.output.backward(&cache.hid_dropped, grad_output)?;

        // Dropout after the dense head.
        let mut grad_hid = grad_hid_dropped;
        if let Some(mask) = &cache.mask_hid {
            for (g, m) in grad_hid.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        // ReLU of the dense head.
        for (g, &pre) in grad_hid.data_mut().iter_mut().zip(cache.hid_pre.data()) {
            if pre <= 0.0 {
                *g = 0.0;
            }
        }
        let (grad_pooled_dropped, g_head_w, g_head_b) =
            self.head.backward(&cache.pooled_dropped, &grad_hid)?;

        // Dropout after pooling.
        let mut grad_pooled = grad_pooled_dropped;
        if let Some(mask) = &cache.mask_pool {
            for (g, m) in grad_pooled.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
        }

        // Pooling: spread evenly over time rows.
        let rows = cache.final_rows;
        let mut grad_x = Tensor::zeros(&[rows, self.config.d_model]);
        for r in 0..rows {
            for (g, p) in grad_x.row_mut(r).iter_mut().zip(grad_pooled.row(0)) {
                *g = p / rows as f64;
            }
        }

        // Encoder layers, in reverse.
        let mut layer_grads: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        for (layer, fwd) in self.layers.iter().zip(&cache.layers).rev() {
            // out = a + ff2(relu(ff1(ln2(a)))) with a = x + attn(ln1(x)).
            let grad_out = grad_x;
            let (grad_h, g_ff2_w, g_ff2_b) = layer.ff2.backward(&fwd.h, &grad_out)?;
            let mut grad_h_pre = grad_h;
            for (g, &pre) in grad_h_pre.data_mut().iter_mut().zip(fwd.h_pre.data()) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let (grad_n2, g_ff1_w, g_ff1_b) = layer.ff1.backward(&fwd.n2, &grad_h_pre)?;
            let (grad_a_norm, g_ln2_gamma, g_ln2_beta) = layer.ln2.backward(&fwd.ln2, &grad_n2);
            let mut grad_a = grad_out.clone();
            grad_a.add_assign(&grad_a_norm)?;

            let (grad_n1, attn_grads) = layer.attn.backward(&fwd.n1, &fwd.attn, &grad_a)?;
            let (grad_x_norm, g_ln1_gamma, g_ln1_beta) = layer.ln1.backward(&fwd.ln1, &grad_n1);
            let mut grad_in = grad_a.clone();
            grad_in.add_assign(&grad_x_norm)?;

            layer_grads.push(vec![
                g_ln1_gamma,
                g_ln1_beta,
                attn_grads.wq,
                attn_grads.wk,
                attn_grads.wv,
                attn_grads.wo,
                g_ln2_gamma,
                g_ln2_beta,
                g_ff1_w,
                g_ff1_b,
                g_ff2_w,
                g_ff2_b,
            ]);
            grad_x = grad_in;
        }
        layer_grads.reverse();

        // Positional encoding is additive, so the gradient passes
        // through to the embedding unchanged.
        let (_, g_embed_w, g_embed_b) = self.embed.backward(&cache.input, &grad_x)?;

        let mut tensors = vec![g_embed_w, g_embed_b];
        for lg in layer_grads {
            tensors.extend(lg);
        }
        tensors.extend([g_head_w, g_head_b, g_out_w, g_out_b]);
        let grads = GradientSet { tensors };
        grads.check_finite()?;
        Ok(grads)
    }

    /// Loss and gradients for one sample:
    /// loss = mean over output features of the squared error.
    pub fn loss_and_gradients(
        &self,
        sample: &WindowSample,
        mode: Mode,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, GradientSet)> {
        let cache = self.forward(&sample.input, mode, dropout_rng)?;
        let out = cache.output.row(0);
        let d = self.config.output_features as f64;
        let loss = out
            .iter()
            .zip(&sample.target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / d;
        let grad_data: Vec<f64> = out
            .iter()
            .zip(&sample.target)
            .map(|(o, t)| 2.0 * (o - t) / d)
            .collect();
        let grad_out = Tensor::from_vec(&[1, self.config.output_features], grad_data)?;
        let grads = self.backward(&cache, &grad_out)?;
        Ok((loss, grads))
    }

    /// Squared-error loss of one sample in evaluation mode.
    pub fn sample_loss(&self, sample: &WindowSample) -> Result<f64> {
        let cache = self.forward(&sample.input, Mode::Eval, None)?;
        let d = self.config.output_features as f64;
        Ok(cache
            .output
            .row(0)
            .iter()
            .zip(&sample.target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>()
            / d)
    }

    /// Rebuild derived state (positional encoding) after loading.
    pub fn rebuild_positional_encoding(&mut self) -> Result<()> {
        self.pos = positional_encoding(self.config.window_steps, self.config.d_model)?;
        Ok(())
    }
}

/// Mean squared error averaged over every scalar entry.
pub fn mse_loss(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    if y.shape() != y_hat.shape() {
        return Err(Error::domain(format!(
            "mse shape mismatch: {:?} vs {:?}",
            y.shape(),
            y_hat.shape()
        )));
    }
    if y.is_empty() {
        return Err(Error::domain("mse of empty tensors"));
    }
    let sum: f64 = y
        .data()
        .iter()
        .zip(y_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / y.len() as f64)
}
