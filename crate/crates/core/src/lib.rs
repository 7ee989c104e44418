//! Driving-style clustering and prediction, transformer-based merge
//! trajectory forecasting, and prediction-aware motion planning for an
//! automated vehicle in a highway on-ramp merging scenario, evaluated by
//! time-to-collision.
//!
//! The pipeline is hierarchical: merging episodes are clustered into
//! aggressive/normal styles, a logistic model predicts the style online
//! from early lateral-deviation change rates, per-style transformers
//! forecast the merging trajectory, and a four-state planner (cruise,
//! following, real-time avoidance, avoidance in advance) consumes the
//! forecast to adjust the ego vehicle ahead of the merge.

pub mod clustering;
pub mod config;
pub mod error;
pub mod planner;
pub mod rng;
pub mod safety;
pub mod scenarios;
pub mod style;
pub mod trajectory;
pub mod transformer;

pub use error::{Error, Result};

/// Fixed sample step (s) shared by every trajectory in the pipeline.
/// Inputs at other rates are rejected, not resampled.
pub const DT: f64 = 0.033;

/// Converts a duration in seconds to a whole number of sample steps.
///
/// Uses truncation so that the canonical window grid
/// {1.67, 3.33, 5, 6.67, 8.33, 10, 11.67} s maps to
/// {50, 100, 151, 202, 252, 303, 353} steps.
pub fn seconds_to_steps(seconds: f64) -> usize {
    (seconds / DT) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_grid_maps_to_expected_steps() {
        let grid = [1.67, 3.33, 5.0, 6.67, 8.33, 10.0, 11.67];
        let expected = [50, 100, 151, 202, 252, 303, 353];
        for (&w, &steps) in grid.iter().zip(expected.iter()) {
            assert_eq!(seconds_to_steps(w), steps, "window {w} s");
        }
    }

    #[test]
    fn thirty_second_horizon_is_909_steps() {
        assert_eq!(seconds_to_steps(30.0), 909);
    }
}
