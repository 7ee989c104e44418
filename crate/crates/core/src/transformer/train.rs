//! Training loop and autoregressive rollout.
//!
//! Per-sample gradients inside a minibatch are computed in parallel and
//! summed in index order, so results are bit-identical for any thread
//! count. Shuffling and dropout draw from named sub-streams of the
//! training seed.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::transformer::dataset::{FeatureRow, WindowSample, FEATURES};
use crate::transformer::model::{GradientSet, Mode, TransformerModel};
use crate::transformer::optim::RmsProp;
use crate::transformer::Tensor;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 40,
            batch_size: 64,
            learning_rate: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    /// Set when a numeric guard tripped; the model holds the last good
    /// epoch's weights.
    pub aborted: Option<String>,
}

/// Trains the model in place. On a numeric-guard trip the weights roll
/// back to the last completed epoch and the report records the abort.
pub fn train(
    model: &mut TransformerModel,
    train_set: &[WindowSample],
    val_set: Option<&[WindowSample]>,
    params: &TrainParams,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(Error::domain("empty training set"));
    }
    if params.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut optimizer = RmsProp::new(params.learning_rate, params.decay, params.epsilon);
    let mut history = Vec::with_capacity(params.epochs);
    let mut checkpoint = model.clone();

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..params.epochs {
        let mut shuffle_rng = rng::stream(params.seed, "shuffle", epoch as u64);
        indices.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut aborted = None;
        'batches: for (batch_no, batch) in indices.chunks(params.batch_size).enumerate() {
            // Per-sample loss and gradients in parallel; the dropout
            // stream is keyed by (epoch, batch, position) so results do
            // not depend on scheduling.
            let results: Vec<Result<(f64, GradientSet)>> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let stream_id = ((epoch as u64) << 40)
                        ^ ((batch_no as u64) << 20)
                        ^ pos as u64;
                    let mut dropout_rng = rng::stream(params.seed, "dropout", stream_id);
                    model.loss_and_gradients(&train_set[idx], Mode::Train, Some(&mut dropout_rng))
                })
                .collect();

            let mut total = GradientSet::zeros_like(model);
            let mut batch_loss = 0.0;
            for r in results {
                match r {
                    Ok((loss, grads)) => {
                        batch_loss += loss;
                        total.add_assign(&grads)?;
                    }
                    Err(Error::NumericGuard(msg)) => {
                        aborted = Some(msg);
                        break 'batches;
                    }
                    Err(e) => return Err(e),
                }
            }
            total.scale(1.0 / batch.len() as f64);
            epoch_loss += batch_loss;
            optimizer.step(model.params_mut(), &total)?;
        }

        if let Some(msg) = aborted {
            *model = checkpoint;
            return Ok(TrainReport {
                history,
                aborted: Some(format!("numeric guard tripped in epoch {epoch}: {msg}")),
            });
        }

        let train_mse = epoch_loss / train_set.len() as f64;
        let val_mse = match val_set {
            Some(vs) if !vs.is_empty() => Some(evaluate_mse(model, vs)?),
            _ => None,
        };
        history.push(EpochLoss { epoch, train_mse, val_mse });
        checkpoint = model.clone();
    }
    Ok(TrainReport { history, aborted: None })
}

/// Mean one-step squared error over a sample set (evaluation mode).
pub fn evaluate_mse(model: &TransformerModel, samples: &[WindowSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::domain("empty evaluation set"));
    }
    let losses: Vec<Result<f64>> = samples.par_iter().map(|s| model.sample_loss(s)).collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

/// Iterated one-step prediction: each step appends the prediction and
/// slides the window by one. History and output are in physical units;
/// normalization uses the model's stored statistics.
pub fn rollout_predict(
    model: &TransformerModel,
    history: &[FeatureRow],
    horizon_steps: usize,
) -> Result<Vec<FeatureRow>> {
    let w = model.config.window_steps;
    if history.len() < w {
        return Err(Error::domain(format!(
            "rollout needs at least {w} history rows, got {}",
            history.len()
        )));
    }
    let mut window: Vec<FeatureRow> = history[history.len() - w..]
        .iter()
        .map(|r| model.norm.normalize_row(r))
        .collect();
    let mut out = Vec::with_capacity(horizon_steps);
    for _ in 0..horizon_steps {
        let mut data = Vec::with_capacity(w * FEATURES);
        for row in &window {
            data.extend_from_slice(row);
        }
        let input = Tensor::from_vec(&[w, FEATURES], data)?;
        let next = model.predict(&input)?;
        out.push(model.norm.denormalize_row(&next));
        window.remove(0);
        window.push(next);
    }
    Ok(out)
}

/// Writes the loss history as `epoch,train_mse,val_mse`.
pub fn write_loss_history(path: &std::path::Path, history: &[EpochLoss]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut text = String::from("epoch,train_mse,val_mse\n");
    for h in history {
        let val = h.val_mse.map_or(String::new(), |v| v.to_string());
        text.push_str(&format!("{},{},{}\n", h.epoch, h.train_mse, val));
    }
    std::fs::write(path, text)?;
    Ok(())
}
