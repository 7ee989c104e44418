//! Sliding-window dataset construction and min-max normalization.
//!
//! Each sample is a window of `w` consecutive feature rows
//! (x, y, v_x, v_y) predicting the row one step ahead. Features are
//! normalized to [0, 1] with statistics fitted on the training split
//! only; the statistics are stored in the model so predictions can be
//! mapped back to physical units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{MergingEpisode, VehicleState};
use crate::transformer::Tensor;

pub const FEATURES: usize = 4;

pub type FeatureRow = [f64; FEATURES];

pub fn state_features(s: &VehicleState) -> FeatureRow {
    [s.x, s.y, s.v_x, s.v_y]
}

/// Per-feature min-max normalization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; FEATURES],
    pub max: [f64; FEATURES],
}

impl NormStats {
    /// Fits the statistics over every state of the given episodes.
    pub fn fit(episodes: &[&MergingEpisode]) -> Result<Self> {
        let mut min = [f64::INFINITY; FEATURES];
        let mut max = [f64::NEG_INFINITY; FEATURES];
        let mut any = false;
        for ep in episodes {
            for s in &ep.states {
                let row = state_features(s);
                for i in 0..FEATURES {
                    min[i] = min[i].min(row[i]);
                    max[i] = max[i].max(row[i]);
                }
                any = true;
            }
        }
        if !any {
            return Err(Error::domain("cannot fit normalization on an empty episode set"));
        }
        Ok(NormStats { min, max })
    }

    fn span(&self, i: usize) -> f64 {
        let s = self.max[i] - self.min[i];
        if s.abs() < 1e-12 {
            1.0
        } else {
            s
        }
    }

    pub fn normalize_row(&self, row: &FeatureRow) -> FeatureRow {
        let mut out = [0.0; FEATURES];
        for i in 0..FEATURES {
            out[i] = (row[i] - self.min[i]) / self.span(i);
        }
        out
    }

    pub fn denormalize_row(&self, row: &FeatureRow) -> FeatureRow {
        let mut out = [0.0; FEATURES];
        for i in 0..FEATURES {
            out[i] = row[i] * self.span(i) + self.min[i];
        }
        out
    }
}

/// One training sample: a normalized `w x 4` window and the normalized
/// next-step feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub input: Tensor,
    pub target: FeatureRow,
}

/// Result of window construction.
#[derive(Debug)]
pub struct WindowBuild {
    pub samples: Vec<WindowSample>,
    /// Episodes too short to supply a single window.
    pub skipped_episodes: usize,
}

/// Builds one sample per window position: rows [k, k+w) predict row
/// k + w, so an episode of T steps yields T - w samples. Episodes with
/// fewer than w + 1 steps are skipped and counted.
pub fn build_windows(
    episodes: &[&MergingEpisode],
    w_steps: usize,
    norm: &NormStats,
) -> Result<WindowBuild> {
    if w_steps == 0 {
        return Err(Error::config("window must be at least one step"));
    }
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for ep in episodes {
        let t = ep.states.len();
        if t < w_steps + 1 {
            skipped += 1;
            continue;
        }
        let rows: Vec<FeatureRow> = ep
            .states
            .iter()
            .map(|s| norm.normalize_row(&state_features(s)))
            .collect();
        for k in 0..t - w_steps {
            let mut data = Vec::with_capacity(w_steps * FEATURES);
            for row in &rows[k..k + w_steps] {
                data.extend_from_slice(row);
            }
            samples.push(WindowSample {
                input: Tensor::from_vec(&[w_steps, FEATURES], data)?,
                target: rows[k + w_steps],
            });
        }
    }
    Ok(WindowBuild { samples, skipped_episodes: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::NeighborContext;
    use crate::DT;

    fn episode(n: usize) -> MergingEpisode {
        let states: Vec<VehicleState> = (0..n)
            .map(|k| {
                let t = k as f64 * DT;
                VehicleState {
                    t,
                    x: 5.0 - 0.001 * k as f64,
                    y: 13.0 * t,
                    v_x: -0.03,
                    v_y: 13.0 + (k as f64 * 0.01).sin(),
                    a_y: 0.0,
                    lane_id: 0,
                    length: 4.5,
                    width: 1.8,
                }
            })
            .collect();
        MergingEpisode {
            vehicle_id: 0,
            t_s: states[1].t,
            t_lc: states[n / 2].t,
            t_e: states[n - 2].t,
            d_a: 0.0,
            neighbors: vec![NeighborContext::default(); n],
            states,
            style: None,
        }
    }

    #[test]
    fn window_count_is_t_minus_w() {
        let ep = episode(100);
        let norm = NormStats::fit(&[&ep]).unwrap();
        let build = build_windows(&[&ep], 50, &norm).unwrap();
        assert_eq!(build.samples.len(), 50);
        // Boundary: w = T - 1 yields exactly one sample.
        let build = build_windows(&[&ep], 99, &norm).unwrap();
        assert_eq!(build.samples.len(), 1);
        // Too short: skipped.
        let build = build_windows(&[&ep], 100, &norm).unwrap();
        assert!(build.samples.is_empty());
        assert_eq!(build.skipped_episodes, 1);
    }

    #[test]
    fn normalization_round_trip() {
        let ep = episode(64);
        let norm = NormStats::fit(&[&ep]).unwrap();
        for s in &ep.states {
            let row = state_features(s);
            let back = norm.denormalize_row(&norm.normalize_row(&row));
            for i in 0..FEATURES {
                assert!((back[i] - row[i]).abs() < 1e-9, "feature {i}");
            }
            let n = norm.normalize_row(&row);
            assert!(n.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn windows_are_consecutive_and_targets_align() {
        let ep = episode(60);
        let norm = NormStats::fit(&[&ep]).unwrap();
        let build = build_windows(&[&ep], 10, &norm).unwrap();
        let rows: Vec<FeatureRow> = ep
            .states
            .iter()
            .map(|s| norm.normalize_row(&state_features(s)))
            .collect();
        for (k, sample) in build.samples.iter().enumerate() {
            assert_eq!(sample.input.shape(), &[10, FEATURES]);
            for j in 0..10 {
                for f in 0..FEATURES {
                    assert_eq!(sample.input.at(j, f), rows[k + j][f]);
                }
            }
            assert_eq!(sample.target, rows[k + 10]);
        }
    }
}
