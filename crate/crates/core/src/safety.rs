//! Time-to-collision evaluation and the scenario runner.
//!
//! TTC(t) = (X_hdv - X_ads - L_hdv) / (V_ads - V_hdv) while the ego is
//! closing, +inf otherwise, 0 with a collision flag when the bumpers
//! overlap. Scenario runs compare the no-prediction baseline (the ego
//! reacts only after the merging vehicle crosses the boundary) against
//! prediction-aware planning where a rolled-out trajectory triggers
//! avoidance in advance.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{thresholds, PlannerConfig, SimWorld, StepLog};
use crate::scenarios::{generate_episode_in, MergeGeometry, ScenarioSpec};
use crate::style::{build_feature_vector, classify, predict_style, LogisticModel};
use crate::trajectory::{StyleLabel, VehicleState};
use crate::transformer::{rollout_predict, state_features, FeatureRow, TransformerModel};
use crate::{seconds_to_steps, DT};

/// Instantaneous time to collision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtcValue {
    /// Seconds; +inf when the ego is not closing.
    pub seconds: f64,
    /// Set when the bumper spacing is negative.
    pub collision: bool,
}

/// TTC between the merging vehicle (ahead) and the ego at one instant.
pub fn ttc(hdv: &VehicleState, ads: &VehicleState) -> Result<TtcValue> {
    if (hdv.t - ads.t).abs() > 1e-9 {
        return Err(Error::domain("states must share a timestamp"));
    }
    if hdv.y < ads.y {
        return Err(Error::domain("the merging vehicle must be ahead of the ego"));
    }
    Ok(ttc_scalar(hdv.y, ads.y, hdv.length, ads.v_y, hdv.v_y))
}

fn ttc_scalar(y_hdv: f64, y_ads: f64, l_hdv: f64, v_ads: f64, v_hdv: f64) -> TtcValue {
    let spacing = y_hdv - y_ads - l_hdv;
    if spacing < 0.0 {
        return TtcValue { seconds: 0.0, collision: true };
    }
    if v_ads <= v_hdv {
        return TtcValue { seconds: f64::INFINITY, collision: false };
    }
    TtcValue { seconds: spacing / (v_ads - v_hdv), collision: false }
}

/// TTC statistics over the interaction window. Non-closing steps
/// (infinite TTC) are excluded from the minimum, average, and sum, and
/// counted separately.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TtcAggregate {
    pub min_finite: Option<f64>,
    pub time_avg_finite: Option<f64>,
    pub sum_finite: f64,
    pub finite_steps: usize,
    pub infinite_steps: usize,
}

impl TtcAggregate {
    fn over(ttc: &[f64]) -> Self {
        let finite: Vec<f64> = ttc.iter().copied().filter(|v| v.is_finite()).collect();
        let sum: f64 = finite.iter().sum();
        TtcAggregate {
            min_finite: finite.iter().copied().reduce(f64::min),
            time_avg_finite: if finite.is_empty() { None } else { Some(sum / finite.len() as f64) },
            sum_finite: sum,
            finite_steps: finite.len(),
            infinite_steps: ttc.len() - finite.len(),
        }
    }
}

/// Trained per-style predictors plus the online style classifier
/// (4-step change-rate prefix).
pub struct StyleModels {
    pub aggressive: TransformerModel,
    pub normal: TransformerModel,
    pub classifier: LogisticModel,
}

impl StyleModels {
    pub fn for_style(&self, style: StyleLabel) -> &TransformerModel {
        match style {
            StyleLabel::Aggressive => &self.aggressive,
            StyleLabel::Normal => &self.normal,
        }
    }
}

/// Planning strategy for one run.
pub enum Strategy<'a> {
    /// React only once the merging vehicle has crossed the boundary.
    NoPrediction,
    /// Roll out the predicted trajectory `horizon_s` seconds before the
    /// merge and engage avoidance in advance when the predicted gap at
    /// the merge falls below the safe threshold. A zero horizon
    /// degenerates to the baseline.
    WithPrediction { models: &'a StyleModels, horizon_s: f64 },
}

/// Everything recorded about one scenario run.
#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub logs: Vec<StepLog>,
    /// Per-step TTC over the full run (+inf allowed).
    pub ttc: Vec<f64>,
    pub collision: bool,
    /// Smallest bumper gap inside the interaction window (m).
    pub min_gap: f64,
    /// Bumper gap at the merge instant (m).
    pub gap_at_merge: f64,
    pub merge_step: usize,
    /// Step range of the interaction window used for TTC statistics.
    pub window: (usize, usize),
    pub ttc_stats: TtcAggregate,
    pub aia_engaged: bool,
    pub predicted_style: Option<StyleLabel>,
}

impl SimulationResult {
    /// Ordering score: time-averaged finite TTC (+inf when the ego never
    /// closes inside the window).
    pub fn score(&self) -> f64 {
        self.ttc_stats.time_avg_finite.unwrap_or(f64::INFINITY)
    }
}

/// Runs one merge scenario under the given strategy.
pub fn run_scenario(
    spec: &ScenarioSpec,
    strategy: &Strategy,
    cfg: &PlannerConfig,
    geometry: &MergeGeometry,
) -> Result<SimulationResult> {
    spec.validate()?;
    cfg.validate()?;
    let (record, _draw) = generate_episode_in(geometry, spec.style, &spec.params, spec.seed)?;
    let episode = &record.episode;
    let states = &episode.states;
    let t0 = states[0].t;
    let t_merge = episode.t_lc;
    let merge_step = episode.index_at(t_merge);
    let hdv_length = states[0].length;

    let ads_v0 = spec.ads_initial_v;
    let ads_y0 = spec.ads_initial_y.unwrap_or_else(|| {
        states[merge_step].y - hdv_length - spec.merge_gap_target - ads_v0 * (t_merge - t0)
    });

    let mut run_cfg = cfg.clone();
    let mut aia_entry = None;
    let mut predicted_style = None;
    if let Strategy::WithPrediction { models, horizon_s } = strategy {
        if *horizon_s > 0.0 {
            run_cfg.prediction_horizon = *horizon_s;
            // Style becomes observable a few change-rate steps after the
            // merge onset; the trajectory model matching the predicted
            // style produces the rollout.
            let style_ready_t = episode.t_s + 4.0 * DT;
            let features = build_feature_vector(episode, 4)?;
            let prob = predict_style(&models.classifier, &features)?;
            let style = classify(prob);
            predicted_style = Some(style);
            let model = models.for_style(style);
            let w = model.config.window_steps;
            let history_ready_t = t0 + w as f64 * DT;
            let t_pred = (t_merge - horizon_s).max(style_ready_t).max(history_ready_t);
            let k_pred = episode.index_at(t_pred).min(merge_step);
            if k_pred + 1 >= w {
                let history: Vec<FeatureRow> =
                    states[..=k_pred].iter().map(state_features).collect();
                let horizon_steps = seconds_to_steps(*horizon_s).max(1);
                let rollout = rollout_predict(model, &history, horizon_steps)?;
                let boundary = geometry.boundary_x();
                if let Some(k_rel) = rollout.iter().position(|row| row[0] <= boundary) {
                    let t_cross_pred = states[k_pred].t + (k_rel + 1) as f64 * DT;
                    let y_hdv_pred = rollout[k_rel][1];
                    let y_ads_proj = ads_y0 + ads_v0 * (t_cross_pred - t0);
                    let predicted_gap = y_hdv_pred - y_ads_proj - hdv_length;
                    if predicted_gap <= thresholds(ads_v0, &run_cfg).safe {
                        aia_entry = Some(k_pred);
                    }
                }
            }
        }
    }

    let mut world = SimWorld::new(states, t_merge, run_cfg, ads_y0, ads_v0, aia_entry)?;
    let logs = world.run()?;

    let ttc_series: Vec<f64> = logs
        .iter()
        .map(|l| ttc_scalar(l.y_hdv, l.y_ads, hdv_length, l.v_ads, l.v_hdv).seconds)
        .collect();
    let collision = logs.iter().any(|l| l.delta_d < 0.0);

    // Interaction window: 5 s before the crossing to 10 s after the
    // merge completes.
    let w_start = episode.index_at(t_merge - 5.0);
    let w_end = episode.index_at(episode.t_e + 10.0);
    let window_ttc = &ttc_series[w_start..=w_end];
    let ttc_stats = TtcAggregate::over(window_ttc);
    let min_gap = logs[w_start..=w_end]
        .iter()
        .map(|l| l.delta_d)
        .fold(f64::INFINITY, f64::min);
    let gap_at_merge = logs[merge_step].delta_d;

    Ok(SimulationResult {
        ttc: ttc_series,
        collision,
        min_gap,
        gap_at_merge,
        merge_step,
        window: (w_start, w_end),
        ttc_stats,
        aia_engaged: logs.iter().any(|l| l.mode == crate::planner::DriveMode::Aia),
        predicted_style,
        logs,
    })
}

/// One sweep row: TTC score per style at one prediction horizon.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub horizon_s: f64,
    pub ttc_normal: f64,
    pub ttc_aggressive: f64,
}

/// Safety scores across prediction horizons, with the no-prediction
/// baseline first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub baseline_normal: f64,
    pub baseline_aggressive: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("prediction_horizon_s,ttc_normal,ttc_aggressive\n");
        out.push_str(&format!(
            "without prediction,{},{}\n",
            self.baseline_normal, self.baseline_aggressive
        ));
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.horizon_s, row.ttc_normal, row.ttc_aggressive));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Runs both styles at every horizon (plus the baseline) and reports the
/// time-averaged finite TTC.
pub fn horizon_sweep(
    normal: &ScenarioSpec,
    aggressive: &ScenarioSpec,
    models: &StyleModels,
    horizons_s: &[f64],
    cfg: &PlannerConfig,
    geometry: &MergeGeometry,
) -> Result<SweepReport> {
    if horizons_s.is_empty() {
        return Err(Error::domain("horizon list is empty"));
    }
    if horizons_s.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("horizons must be strictly increasing"));
    }
    let baseline_normal = run_scenario(normal, &Strategy::NoPrediction, cfg, geometry)?;
    let baseline_aggressive = run_scenario(aggressive, &Strategy::NoPrediction, cfg, geometry)?;

    let rows: Vec<Result<SweepRow>> = horizons_s
        .par_iter()
        .map(|&h| {
            let strategy = Strategy::WithPrediction { models, horizon_s: h };
            let n = run_scenario(normal, &strategy, cfg, geometry)?;
            let a = run_scenario(aggressive, &strategy, cfg, geometry)?;
            Ok(SweepRow { horizon_s: h, ttc_normal: n.score(), ttc_aggressive: a.score() })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(SweepReport {
        baseline_normal: baseline_normal.score(),
        baseline_aggressive: baseline_aggressive.score(),
        rows,
    })
}

/// Writes the per-step log CSV
/// (`t,mode,delta_d,d_c,d_f,d_s,v_ads_ref,v_ads,v_hdv,y_ads,y_hdv`).
pub fn write_step_logs(logs: &[StepLog], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::from("t,mode,delta_d,d_c,d_f,d_s,v_ads_ref,v_ads,v_hdv,y_ads,y_hdv\n");
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            l.t,
            l.mode.name(),
            l.delta_d,
            l.d_c,
            l.d_f,
            l.d_s,
            l.v_ads_ref,
            l.v_ads,
            l.v_hdv,
            l.y_ads,
            l.y_hdv
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
