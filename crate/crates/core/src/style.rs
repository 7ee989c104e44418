//! Online driving-style prediction from early lateral-deviation change
//! rates: z = b + beta_1 K_1 + ... + beta_t K_t pushed through a
//! logistic link, trained by full-batch gradient descent on
//! cross-entropy with an L2 penalty on the weights.
//!
//! The positive class (y = 1) is normal driving; aggressive is 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{change_rate, MergingEpisode, StyleLabel};
use crate::DT;

/// Logistic model over a fixed-length change-rate prefix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub bias: f64,
    /// One weight per time step of the prefix.
    pub weights: Vec<f64>,
}

impl LogisticModel {
    pub fn horizon(&self) -> usize {
        self.weights.len()
    }
}

/// Binary confusion counts with normal driving as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: usize,
    pub false_neg: usize,
    pub false_pos: usize,
    pub true_neg: usize,
}

impl ConfusionMatrix {
    pub fn positives(&self) -> usize {
        self.true_pos + self.false_neg
    }

    pub fn negatives(&self) -> usize {
        self.false_pos + self.true_neg
    }

    pub fn total(&self) -> usize {
        self.positives() + self.negatives()
    }

    /// A = (TP + TN) / (TP + TN + FP + FN).
    pub fn accuracy(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }
}

/// Change-rate prefix [K_1, ..., K_i] sampled at t_s + j * DT.
pub fn build_feature_vector(episode: &MergingEpisode, i_steps: usize) -> Result<Vec<f64>> {
    if i_steps == 0 {
        return Err(Error::domain("prefix length must be at least 1"));
    }
    let last = episode.t_s + i_steps as f64 * DT;
    if last > episode.t_lc + 1e-9 {
        return Err(Error::domain(format!(
            "prefix of {i_steps} steps reaches {last:.3} s, past the lane-change point {:.3} s",
            episode.t_lc
        )));
    }
    (1..=i_steps)
        .map(|j| change_rate(episode, episode.t_s + j as f64 * DT))
        .collect()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Probability that the episode is normal driving (label 1).
pub fn predict_style(model: &LogisticModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.weights.len() {
        return Err(Error::domain(format!(
            "feature length {} does not match model horizon {}",
            features.len(),
            model.weights.len()
        )));
    }
    let z = model.bias + model.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>();
    Ok(logistic(z))
}

/// Class decision at the 0.5 threshold; a tie predicts normal.
pub fn classify(probability_normal: f64) -> StyleLabel {
    if probability_normal >= 0.5 {
        StyleLabel::Normal
    } else {
        StyleLabel::Aggressive
    }
}

/// Cross-entropy plus 0.5 * l2 * ||w||^2 (bias unpenalized).
pub fn logistic_objective(bias: f64, weights: &[f64], xs: &[Vec<f64>], ys: &[f64], l2: f64) -> f64 {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        // softplus(-z) for y = 1, softplus(z) for y = 0, computed stably.
        let a = if y > 0.5 { -z } else { z };
        loss += a.max(0.0) + (-a.abs()).exp().ln_1p();
    }
    loss / n + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`logistic_objective`]: (d/d bias, d/d weights).
pub fn logistic_gradient(
    bias: f64,
    weights: &[f64],
    xs: &[Vec<f64>],
    ys: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = xs.len() as f64;
    let mut g_b = 0.0;
    let mut g_w = vec![0.0; weights.len()];
    for (x, &y) in xs.iter().zip(ys) {
        let z = bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let r = logistic(z) - y;
        g_b += r;
        for (g, v) in g_w.iter_mut().zip(x) {
            *g += r * v;
        }
    }
    g_b /= n;
    for (g, w) in g_w.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (g_b, g_w)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams { l2: 1e-3, learning_rate: 0.1, iterations: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub model: LogisticModel,
    /// Objective value per iteration, in the optimizer's standardized
    /// coordinates.
    pub objective_history: Vec<f64>,
}

/// Fits the logistic model by full-batch gradient descent. Features are
/// standardized internally for conditioning and the solution is mapped
/// back, so the returned model applies to raw change rates.
pub fn fit_logistic(examples: &[(Vec<f64>, StyleLabel)], params: &FitParams) -> Result<LogisticFit> {
    if examples.is_empty() {
        return Err(Error::domain("no training examples"));
    }
    let dims = examples[0].0.len();
    if dims == 0 || examples.iter().any(|(x, _)| x.len() != dims) {
        return Err(Error::domain("inconsistent feature lengths"));
    }
    let ys: Vec<f64> = examples.iter().map(|(_, l)| l.as_index() as f64).collect();
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(Error::DegenerateInput("training data contains a single class".into()));
    }

    let n = examples.len() as f64;
    let mut means = vec![0.0; dims];
    for (x, _) in examples {
        for (m, v) in means.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = vec![0.0; dims];
    for (x, _) in examples {
        for (s, (v, m)) in stds.iter_mut().zip(x.iter().zip(&means)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let xs: Vec<Vec<f64>> = examples
        .iter()
        .map(|(x, _)| x.iter().zip(means.iter().zip(&stds)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();

    let mut bias = 0.0;
    let mut weights = vec![0.0; dims];
    let mut history = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        let (g_b, g_w) = logistic_gradient(bias, &weights, &xs, &ys, params.l2);
        bias -= params.learning_rate * g_b;
        for (w, g) in weights.iter_mut().zip(&g_w) {
            *w -= params.learning_rate * g;
        }
        history.push(logistic_objective(bias, &weights, &xs, &ys, params.l2));
    }

    // Fold the standardization back into raw-space parameters.
    let raw_weights: Vec<f64> = weights.iter().zip(&stds).map(|(w, s)| w / s).collect();
    let raw_bias = bias - weights.iter().zip(means.iter().zip(&stds)).map(|(w, (m, s))| w * m / s).sum::<f64>();
    Ok(LogisticFit {
        model: LogisticModel { bias: raw_bias, weights: raw_weights },
        objective_history: history,
    })
}

/// Confusion matrix and accuracy of predicted labels against the truth.
pub fn evaluate_accuracy(
    predictions: &[StyleLabel],
    truth: &[StyleLabel],
) -> Result<(ConfusionMatrix, f64)> {
    if predictions.is_empty() {
        return Err(Error::domain("no predictions to evaluate"));
    }
    if predictions.len() != truth.len() {
        return Err(Error::domain("prediction and label counts differ"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (t, p) {
            (StyleLabel::Normal, StyleLabel::Normal) => cm.true_pos += 1,
            (StyleLabel::Normal, StyleLabel::Aggressive) => cm.false_neg += 1,
            (StyleLabel::Aggressive, StyleLabel::Normal) => cm.false_pos += 1,
            (StyleLabel::Aggressive, StyleLabel::Aggressive) => cm.true_neg += 1,
        }
    }
    let a = cm.accuracy();
    Ok((cm, a))
}

/// Seed-deterministic stratified split; returns (train, test) index sets
/// preserving input order within each side.
pub fn stratified_split(
    labels: &[StyleLabel],
    train_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [StyleLabel::Aggressive, StyleLabel::Normal] {
        let mut idx: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        let mut r = rng::stream(seed, "stratified-split", class.as_index() as u64);
        idx.shuffle(&mut r);
        let n_train = (idx.len() as f64 * train_fraction).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// One row of the prefix-length accuracy sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub i_steps: usize,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
}

/// Trains one model per prefix length i = 1..=max_steps on an 80/20
/// stratified split and reports test accuracy A_i. Episodes whose
/// onset-to-crossing span cannot supply a prefix are skipped.
pub fn accuracy_sweep(
    episodes: &[&MergingEpisode],
    labels: &[StyleLabel],
    max_steps: usize,
    fit: &FitParams,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if episodes.len() != labels.len() {
        return Err(Error::domain("episode and label counts differ"));
    }
    let (train_idx, test_idx) = stratified_split(labels, 0.8, seed);
    let mut out = Vec::with_capacity(max_steps);
    for i in 1..=max_steps {
        let gather = |idx: &[usize]| -> Vec<(Vec<f64>, StyleLabel)> {
            idx.iter()
                .filter_map(|&k| {
                    build_feature_vector(episodes[k], i)
                        .ok()
                        .map(|f| (f, labels[k]))
                })
                .collect()
        };
        let train = gather(&train_idx);
        let test = gather(&test_idx);
        if train.is_empty() || test.is_empty() {
            return Err(Error::domain(format!(
                "no episodes can supply a {i}-step prefix"
            )));
        }
        let fitted = fit_logistic(&train, fit)?;
        let preds: Vec<StyleLabel> = test
            .iter()
            .map(|(x, _)| Ok(classify(predict_style(&fitted.model, x)?)))
            .collect::<Result<_>>()?;
        let truth: Vec<StyleLabel> = test.iter().map(|(_, l)| *l).collect();
        let (_, accuracy) = evaluate_accuracy(&preds, &truth)?;
        out.push(SweepPoint {
            i_steps: i,
            accuracy,
            n_train: train.len(),
            n_test: test.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_midpoint_and_saturation() {
        let m = LogisticModel { bias: 0.0, weights: vec![0.0; 3] };
        assert_eq!(predict_style(&m, &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let m = LogisticModel { bias: 1.0, weights: vec![0.0; 2] };
        let y = predict_style(&m, &[5.0, -2.0]).unwrap();
        assert!((y - 0.7310585786300049).abs() < 1e-12);
        let m = LogisticModel { bias: -60.0, weights: vec![0.0] };
        assert!(predict_style(&m, &[0.0]).unwrap() < 1e-20);
    }

    #[test]
    fn predict_rejects_length_mismatch() {
        let m = LogisticModel { bias: 0.0, weights: vec![0.0; 3] };
        assert!(predict_style(&m, &[1.0]).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::Rng;
        for seed in 0..50u64 {
            let mut r = rng::stream(seed, "grad-check", 0);
            let dims = 1 + (r.random::<u64>() % 6) as usize;
            let n = 4 + (r.random::<u64>() % 12) as usize;
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dims).map(|_| r.random::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let ys: Vec<f64> = (0..n).map(|_| f64::from(r.random::<bool>())).collect();
            if ys.iter().all(|&y| y == ys[0]) {
                continue;
            }
            let bias = r.random::<f64>() - 0.5;
            let weights: Vec<f64> = (0..dims).map(|_| r.random::<f64>() - 0.5).collect();
            let l2 = 1e-3;
            let (g_b, g_w) = logistic_gradient(bias, &weights, &xs, &ys, l2);

            let h = 1e-5;
            let fd_b = (logistic_objective(bias + h, &weights, &xs, &ys, l2)
                - logistic_objective(bias - h, &weights, &xs, &ys, l2))
                / (2.0 * h);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            assert!(rel(g_b, fd_b) < 1e-4, "bias grad {g_b} vs {fd_b}");
            for j in 0..dims {
                let mut wp = weights.clone();
                wp[j] += h;
                let mut wm = weights.clone();
                wm[j] -= h;
                let fd = (logistic_objective(bias, &wp, &xs, &ys, l2)
                    - logistic_objective(bias, &wm, &xs, &ys, l2))
                    / (2.0 * h);
                assert!(rel(g_w[j], fd) < 1e-4, "w[{j}] grad {} vs {fd}", g_w[j]);
            }
        }
    }

    #[test]
    fn separable_data_reaches_full_training_accuracy() {
        let examples: Vec<(Vec<f64>, StyleLabel)> = (0..20)
            .map(|i| {
                if i % 2 == 0 {
                    (vec![-1.0 - 0.01 * i as f64], StyleLabel::Aggressive)
                } else {
                    (vec![1.0 + 0.01 * i as f64], StyleLabel::Normal)
                }
            })
            .collect();
        let fit = fit_logistic(&examples, &FitParams::default()).unwrap();
        for (x, l) in &examples {
            let p = predict_style(&fit.model, x).unwrap();
            assert_eq!(classify(p), *l);
        }
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn huge_l2_shrinks_weights_to_bias_only() {
        let examples: Vec<(Vec<f64>, StyleLabel)> = (0..40)
            .map(|i| {
                if i % 2 == 0 {
                    (vec![-1.0], StyleLabel::Aggressive)
                } else {
                    (vec![1.0], StyleLabel::Normal)
                }
            })
            .collect();
        let params = FitParams { l2: 1e6, learning_rate: 1e-6, iterations: 3000 };
        let fit = fit_logistic(&examples, &params).unwrap();
        assert!(fit.model.weights[0].abs() < 1e-3, "weight {}", fit.model.weights[0]);
        let p = predict_style(&fit.model, &[0.7]).unwrap();
        assert!((p - logistic(fit.model.bias)).abs() < 1e-3);
    }

    #[test]
    fn single_class_is_degenerate() {
        let examples = vec![
            (vec![1.0], StyleLabel::Normal),
            (vec![2.0], StyleLabel::Normal),
        ];
        assert!(matches!(
            fit_logistic(&examples, &FitParams::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn confusion_matrix_hand_case() {
        // TP=7, TN=8, FP=3, FN=2 -> A = 15/20 = 0.75.
        let mut preds = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..7 {
            preds.push(StyleLabel::Normal);
            truth.push(StyleLabel::Normal);
        }
        for _ in 0..2 {
            preds.push(StyleLabel::Aggressive);
            truth.push(StyleLabel::Normal);
        }
        for _ in 0..3 {
            preds.push(StyleLabel::Normal);
            truth.push(StyleLabel::Aggressive);
        }
        for _ in 0..8 {
            preds.push(StyleLabel::Aggressive);
            truth.push(StyleLabel::Aggressive);
        }
        let (cm, a) = evaluate_accuracy(&preds, &truth).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix { true_pos: 7, false_neg: 2, false_pos: 3, true_neg: 8 }
        );
        assert!((a - 0.75).abs() < 1e-12);
        assert_eq!(cm.positives(), 9);
        assert_eq!(cm.negatives(), 11);
    }

    #[test]
    fn all_correct_is_one() {
        let labels = vec![StyleLabel::Normal, StyleLabel::Aggressive];
        let (_, a) = evaluate_accuracy(&labels, &labels).unwrap();
        assert_eq!(a, 1.0);
        assert!(evaluate_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn class_decision_invariant_under_positive_feature_scaling() {
        use rand::Rng;
        let mut r = rng::stream(99, "scale-invariance", 0);
        for _ in 0..100 {
            let dims = 1 + (r.random::<u64>() % 5) as usize;
            let model = LogisticModel {
                bias: 0.0,
                weights: (0..dims).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
            };
            let x: Vec<f64> = (0..dims).map(|_| r.random::<f64>() * 2.0 - 1.0).collect();
            let c = r.random::<f64>() * 5.0 + 0.01;
            let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
            let p = predict_style(&model, &x).unwrap();
            let ps = predict_style(&model, &scaled).unwrap();
            assert_eq!(classify(p), classify(ps));
        }
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let labels: Vec<StyleLabel> = (0..100)
            .map(|i| if i < 45 { StyleLabel::Aggressive } else { StyleLabel::Normal })
            .collect();
        let (train_a, test_a) = stratified_split(&labels, 0.8, 7);
        let (train_b, test_b) = stratified_split(&labels, 0.8, 7);
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(train_a.len(), 80);
        let train_agg = train_a.iter().filter(|&&i| i < 45).count();
        assert_eq!(train_agg, 36); // 80% of 45
        let mut all: Vec<usize> = train_a.iter().chain(&test_a).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }
}
