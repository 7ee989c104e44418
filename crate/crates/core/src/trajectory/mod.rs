//! Trajectory domain types and the per-sample kinematic quantities
//! derived from them (lateral deviation, deviation change rate, gaps and
//! range rates), plus merging-episode extraction and dataset I/O.

mod extract;
mod io;

pub use extract::{
    attach_neighbors, extract_merging_episode, extract_merging_episode_with, ExtractionParams,
};
pub use io::{load_trajectories, save_trajectories, EpisodeRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::DT;

/// Kinematic sample of one vehicle at one instant.
///
/// `x` is the lateral coordinate (m), `y` the longitudinal coordinate
/// (m). Longitudinal positions reference the front bumper, so the
/// bumper-to-bumper gap to a leader is `y_lead - y - lead.length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Time instant (s).
    pub t: f64,
    /// Lateral position (m).
    pub x: f64,
    /// Longitudinal position (m), front bumper.
    pub y: f64,
    /// Lateral velocity (m/s).
    pub v_x: f64,
    /// Longitudinal velocity (m/s).
    pub v_y: f64,
    /// Longitudinal acceleration (m/s²).
    pub a_y: f64,
    /// Lane the vehicle center is in.
    pub lane_id: u32,
    /// Vehicle length (m).
    pub length: f64,
    /// Vehicle width (m).
    pub width: f64,
}

impl VehicleState {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0) {
            return Err(Error::domain(format!("length must be > 0, got {}", self.length)));
        }
        if !(self.width > 0.0) {
            return Err(Error::domain(format!("width must be > 0, got {}", self.width)));
        }
        if !self.t.is_finite() {
            return Err(Error::domain("timestamp must be finite"));
        }
        Ok(())
    }
}

/// Lateral extent of one lane. The left boundary is the smaller `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub lane_id: u32,
    /// Left boundary (m), smaller lateral coordinate.
    pub left_boundary_x: f64,
    /// Right boundary (m).
    pub right_boundary_x: f64,
    /// Lane width (m).
    pub lane_width: f64,
}

impl LaneGeometry {
    pub fn new(lane_id: u32, left_boundary_x: f64, lane_width: f64) -> Result<Self> {
        if !(lane_width > 0.0) {
            return Err(Error::domain(format!("lane width must be > 0, got {lane_width}")));
        }
        Ok(LaneGeometry {
            lane_id,
            left_boundary_x,
            right_boundary_x: left_boundary_x + lane_width,
            lane_width,
        })
    }

    pub fn centerline_x(&self) -> f64 {
        self.left_boundary_x + 0.5 * self.lane_width
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.left_boundary_x && x < self.right_boundary_x
    }
}

/// Gaps and range rates to the lead/follow neighbors at one instant.
///
/// Missing neighbors are represented by the `valid` flags, never by
/// sentinel values; the numeric fields of an invalid side are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NeighborContext {
    /// Bumper-to-bumper gap to the leading vehicle, G_l (m).
    pub gap_lead: f64,
    /// Speed difference ego minus leader, RR_l (m/s).
    pub range_rate_lead: f64,
    pub lead_valid: bool,
    /// Bumper-to-bumper gap to the following vehicle, G_f (m).
    pub gap_follow: f64,
    /// Speed difference ego minus follower, RR_f (m/s).
    pub range_rate_follow: f64,
    pub follow_valid: bool,
}

/// Driving style labels. Cluster label 0 is aggressive, 1 is normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StyleLabel {
    Aggressive,
    Normal,
}

impl StyleLabel {
    pub fn as_index(self) -> usize {
        match self {
            StyleLabel::Aggressive => 0,
            StyleLabel::Normal => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(StyleLabel::Aggressive),
            1 => Ok(StyleLabel::Normal),
            _ => Err(Error::domain(format!("style label must be 0 or 1, got {i}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StyleLabel::Aggressive => "aggressive",
            StyleLabel::Normal => "normal",
        }
    }
}

/// One human-driven vehicle's merge: its trajectory sampled at the fixed
/// step `DT`, the neighbor context series, and the merge event
/// timestamps (onset A at `t_s`, lane-change point at `t_lc`, end B at
/// `t_e`).
#[derive(Debug, Clone, PartialEq)]
pub struct MergingEpisode {
    pub vehicle_id: u64,
    pub states: Vec<VehicleState>,
    /// Merge onset, point A (s).
    pub t_s: f64,
    /// Lane-change point, center crosses the boundary (s).
    pub t_lc: f64,
    /// Merge end, point B (s).
    pub t_e: f64,
    /// Lateral deviation at point A (m), relative to the origin lane's
    /// left boundary. The reference boundary is frozen to the origin
    /// lane for the whole episode.
    pub d_a: f64,
    pub neighbors: Vec<NeighborContext>,
    pub style: Option<StyleLabel>,
}

impl MergingEpisode {
    /// Validates the episode invariants: event ordering, a strictly
    /// increasing uniform time grid at step `DT` (tolerance 1e-9 s), and
    /// aligned neighbor series.
    pub fn validate(&self) -> Result<()> {
        if self.states.len() < 2 {
            return Err(Error::domain("episode needs at least two states"));
        }
        if !(self.t_s < self.t_lc && self.t_lc < self.t_e) {
            return Err(Error::domain(format!(
                "event times must satisfy t_s < t_lc < t_e, got {} / {} / {}",
                self.t_s, self.t_lc, self.t_e
            )));
        }
        if self.neighbors.len() != self.states.len() {
            return Err(Error::domain(format!(
                "neighbor series length {} does not match state count {}",
                self.neighbors.len(),
                self.states.len()
            )));
        }
        for w in self.states.windows(2) {
            let dt = w[1].t - w[0].t;
            if dt <= 0.0 {
                return Err(Error::domain("state times must be strictly increasing"));
            }
            if (dt - DT).abs() > 1e-9 {
                return Err(Error::domain(format!(
                    "sample step {dt} differs from the fixed step {DT}; resampling is not supported"
                )));
            }
        }
        for s in &self.states {
            s.validate()?;
        }
        let t0 = self.states[0].t;
        let t_last = self.states[self.states.len() - 1].t;
        if self.t_s < t0 - 1e-9 || self.t_e > t_last + 1e-9 {
            return Err(Error::domain("event times must lie within the sampled range"));
        }
        Ok(())
    }

    /// Lane-change duration LCD = t_e - t_s (s).
    pub fn lcd(&self) -> f64 {
        self.t_e - self.t_s
    }

    pub fn t_start(&self) -> f64 {
        self.states[0].t
    }

    pub fn t_end(&self) -> f64 {
        self.states[self.states.len() - 1].t
    }

    /// Index of the sample grid point nearest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let t0 = self.states[0].t;
        let k = ((t - t0) / DT).round();
        (k.max(0.0) as usize).min(self.states.len() - 1)
    }

    /// Lateral position at `t`, linearly interpolated between samples
    /// (exact at grid points).
    pub fn x_at(&self, t: f64) -> Result<f64> {
        let t0 = self.states[0].t;
        let t_last = self.t_end();
        if t < t0 - 1e-9 || t > t_last + 1e-9 {
            return Err(Error::domain(format!(
                "time {t} outside the sampled range [{t0}, {t_last}]"
            )));
        }
        let pos = ((t - t0) / DT).clamp(0.0, (self.states.len() - 1) as f64);
        let k = pos.floor() as usize;
        if k + 1 >= self.states.len() {
            return Ok(self.states[self.states.len() - 1].x);
        }
        let frac = pos - k as f64;
        Ok(self.states[k].x * (1.0 - frac) + self.states[k + 1].x * frac)
    }
}

/// Lateral position deviation D_t: distance from the vehicle center to
/// the lane's left boundary. Negative once the center has passed the
/// boundary toward smaller `x`.
pub fn lateral_deviation(state: &VehicleState, lane: &LaneGeometry) -> Result<f64> {
    if state.lane_id != lane.lane_id {
        return Err(Error::domain(format!(
            "state lane {} does not match lane geometry {}",
            state.lane_id, lane.lane_id
        )));
    }
    Ok(state.x - lane.left_boundary_x)
}

/// Change rate K_t of the lateral deviation since merge onset:
/// (D_t - D_A) / (t - t_s). The frozen reference boundary cancels, so
/// the rate reduces to (x(t) - x(t_s)) / (t - t_s).
pub fn change_rate(episode: &MergingEpisode, t: f64) -> Result<f64> {
    if t <= episode.t_s {
        return Err(Error::domain(format!(
            "change rate requires t > t_s ({} <= {})",
            t, episode.t_s
        )));
    }
    let x_t = episode.x_at(t)?;
    let x_s = episode.x_at(episode.t_s)?;
    let rate = (x_t - x_s) / (t - episode.t_s);
    if !rate.is_finite() {
        return Err(Error::domain("change rate is not finite"));
    }
    Ok(rate)
}

/// Bumper-to-bumper gap and range rate between two vehicles at the same
/// instant. The gap subtracts the other vehicle's length so that zero
/// means contact; the range rate is ego minus other longitudinal speed.
pub fn gap_and_range_rate(ego: &VehicleState, other: &VehicleState) -> Result<(f64, f64)> {
    if (ego.t - other.t).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "states must share a timestamp ({} vs {})",
            ego.t, other.t
        )));
    }
    let gap = (other.y - ego.y).abs() - other.length;
    let range_rate = ego.v_y - other.v_y;
    Ok((gap, range_rate))
}
