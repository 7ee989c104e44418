//! Merging-episode extraction from a raw trajectory.
//!
//! The lane-change point is the first sample after the vehicle center
//! crosses into the target lane. The onset t_s is the last quiet instant
//! before it (lateral deviation rate at or below a threshold, sustained),
//! and t_e is the first instant the center settles into a band around the
//! target-lane centerline.

use crate::error::{Error, Result};
use crate::trajectory::{
    gap_and_range_rate, LaneGeometry, MergingEpisode, NeighborContext, VehicleState,
};
use crate::DT;

/// Detection thresholds. The paper identifies the merge events from
/// video; these make the events reproducible from sampled data.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionParams {
    /// Onset threshold on |dD/dt| (m/s).
    pub onset_rate_threshold: f64,
    /// How long the rate must stay below the threshold (s).
    pub onset_sustain: f64,
    /// Settle band around the target-lane centerline (m).
    pub settle_band: f64,
    /// How long the center must stay within the band (s).
    pub settle_sustain: f64,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            onset_rate_threshold: 0.05,
            onset_sustain: 0.2,
            settle_band: 0.2,
            settle_sustain: 0.5,
        }
    }
}

/// Extracts the merge events from a trajectory that crosses exactly one
/// lane boundary. Neighbor context is left invalid; attach it with
/// [`attach_neighbors`] when the surrounding trajectories are known.
pub fn extract_merging_episode(
    trajectory: &[VehicleState],
    lanes: &[LaneGeometry],
) -> Result<MergingEpisode> {
    extract_merging_episode_with(trajectory, lanes, &ExtractionParams::default())
}

pub fn extract_merging_episode_with(
    trajectory: &[VehicleState],
    lanes: &[LaneGeometry],
    params: &ExtractionParams,
) -> Result<MergingEpisode> {
    if trajectory.len() < 3 {
        return Err(Error::domain("trajectory too short to extract a merge"));
    }
    for w in trajectory.windows(2) {
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            return Err(Error::domain("trajectory times must be strictly increasing"));
        }
        if (dt - DT).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "sample step {dt} differs from the fixed step {DT}"
            )));
        }
    }

    let changes: Vec<usize> = (1..trajectory.len())
        .filter(|&k| trajectory[k].lane_id != trajectory[k - 1].lane_id)
        .collect();
    let k_lc = match changes.len() {
        0 => return Err(Error::extraction("no lane crossing found")),
        1 => changes[0],
        n => {
            return Err(Error::extraction(format!(
                "{n} lane changes found; only single-change episodes are supported"
            )))
        }
    };

    let origin = lane_by_id(lanes, trajectory[0].lane_id)?;
    let target = lane_by_id(lanes, trajectory[k_lc].lane_id)?;

    // Deviation is referenced to the origin lane's left boundary for the
    // whole episode.
    let d: Vec<f64> = trajectory.iter().map(|s| s.x - origin.left_boundary_x).collect();

    let n_onset = ((params.onset_sustain / DT).round() as usize).max(1);
    let mut k_s = None;
    for k in (n_onset..k_lc).rev() {
        let quiet = (k + 1 - n_onset..=k)
            .all(|j| ((d[j] - d[j - 1]) / DT).abs() <= params.onset_rate_threshold);
        if quiet {
            k_s = Some(k);
            break;
        }
    }
    let k_s = k_s.ok_or_else(|| {
        Error::extraction("merge onset not found before the lane-change point")
    })?;

    let n_settle = ((params.settle_sustain / DT).round() as usize).max(1);
    let center = target.centerline_x();
    let mut k_e = None;
    for k in k_lc..trajectory.len() {
        if k + n_settle > trajectory.len() {
            break;
        }
        let settled = (k..k + n_settle).all(|j| (trajectory[j].x - center).abs() <= params.settle_band);
        if settled {
            k_e = Some(k);
            break;
        }
    }
    let k_e = k_e.ok_or_else(|| {
        Error::extraction("vehicle never settles on the target-lane centerline")
    })?;

    let episode = MergingEpisode {
        vehicle_id: 0,
        t_s: trajectory[k_s].t,
        t_lc: trajectory[k_lc].t,
        t_e: trajectory[k_e].t,
        d_a: d[k_s],
        neighbors: vec![NeighborContext::default(); trajectory.len()],
        states: trajectory.to_vec(),
        style: None,
    };
    episode.validate()?;
    Ok(episode)
}

fn lane_by_id(lanes: &[LaneGeometry], id: u32) -> Result<&LaneGeometry> {
    lanes
        .iter()
        .find(|l| l.lane_id == id)
        .ok_or_else(|| Error::domain(format!("no lane geometry for lane {id}")))
}

/// Computes the neighbor-context series from the lead/follow vehicle
/// trajectories. A side is valid at a step only where the neighbor
/// trajectory covers the episode's timestamp.
pub fn attach_neighbors(
    episode: &mut MergingEpisode,
    lead: Option<&[VehicleState]>,
    follow: Option<&[VehicleState]>,
) -> Result<()> {
    let mut ctx = vec![NeighborContext::default(); episode.states.len()];
    for (k, state) in episode.states.iter().enumerate() {
        if let Some(lead) = lead {
            if let Some(other) = sample_at(lead, state.t) {
                let (gap, rr) = gap_and_range_rate(state, other)?;
                ctx[k].gap_lead = gap;
                ctx[k].range_rate_lead = rr;
                ctx[k].lead_valid = true;
            }
        }
        if let Some(follow) = follow {
            if let Some(other) = sample_at(follow, state.t) {
                let (gap, rr) = gap_and_range_rate(state, other)?;
                ctx[k].gap_follow = gap;
                ctx[k].range_rate_follow = rr;
                ctx[k].follow_valid = true;
            }
        }
    }
    episode.neighbors = ctx;
    Ok(())
}

fn sample_at(trajectory: &[VehicleState], t: f64) -> Option<&VehicleState> {
    if trajectory.is_empty() {
        return None;
    }
    let k = ((t - trajectory[0].t) / DT).round();
    if k < 0.0 {
        return None;
    }
    let k = k as usize;
    let state = trajectory.get(k)?;
    ((state.t - t).abs() <= 1e-6).then_some(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lanes() -> Vec<LaneGeometry> {
        vec![
            LaneGeometry::new(1, 0.0, 3.5).unwrap(),
            LaneGeometry::new(0, 3.5, 3.5).unwrap(),
        ]
    }

    fn straight(n: usize, x: f64, lane_id: u32) -> Vec<VehicleState> {
        (0..n)
            .map(|k| VehicleState {
                t: k as f64 * DT,
                x,
                y: 13.0 * k as f64 * DT,
                v_x: 0.0,
                v_y: 13.0,
                a_y: 0.0,
                lane_id,
                length: 4.5,
                width: 1.8,
            })
            .collect()
    }

    #[test]
    fn straight_line_has_no_crossing() {
        let traj = straight(300, 5.25, 0);
        let err = extract_merging_episode(&traj, &lanes()).unwrap_err();
        assert!(err.to_string().contains("no lane crossing"));
    }

    #[test]
    fn reversed_time_is_rejected() {
        let mut traj = straight(300, 5.25, 0);
        traj.reverse();
        assert!(extract_merging_episode(&traj, &lanes()).is_err());
    }

    #[test]
    fn double_crossing_is_rejected() {
        let mut traj = straight(300, 5.25, 0);
        for s in traj.iter_mut().skip(100).take(50) {
            s.lane_id = 1;
            s.x = 1.75;
        }
        let err = extract_merging_episode(&traj, &lanes()).unwrap_err();
        assert!(err.to_string().contains("lane changes"));
    }

    #[test]
    fn logistic_crossing_recovers_events() {
        // Closed-form S-curve from the ramp centerline (5.25) to the
        // target centerline (1.75), crossing the 3.5 boundary at t = 20.
        let k = 0.8;
        let t_mid = 20.0;
        let n = 1200;
        let traj: Vec<VehicleState> = (0..n)
            .map(|i| {
                let t = i as f64 * DT;
                let sig = 1.0 / (1.0 + (-k * (t - t_mid)).exp());
                let x = 5.25 - 3.5 * sig;
                VehicleState {
                    t,
                    x,
                    y: 13.0 * t,
                    v_x: -3.5 * k * sig * (1.0 - sig),
                    v_y: 13.0,
                    a_y: 0.0,
                    lane_id: if x > 3.5 { 0 } else { 1 },
                    length: 4.5,
                    width: 1.8,
                }
            })
            .collect();
        let ep = extract_merging_episode(&traj, &lanes()).unwrap();
        assert!((ep.t_lc - t_mid).abs() <= 2.0 * DT, "t_lc = {}", ep.t_lc);
        // Onset: |dx/dt| = 0.05 => sig(1-sig) = 0.05/(3.5 k).
        let q = 0.05 / (3.5 * k);
        let sig_s = 0.5 * (1.0 - (1.0 - 4.0 * q).sqrt());
        let t_s_true = t_mid + (sig_s / (1.0 - sig_s)).ln() / k;
        assert!((ep.t_s - t_s_true).abs() <= 2.0 * DT, "t_s = {} vs {}", ep.t_s, t_s_true);
        // Settle: |x - 1.75| = 0.2 => sig = 1 - 0.2/3.5.
        let sig_e: f64 = 1.0 - 0.2 / 3.5;
        let t_e_true = t_mid + (sig_e / (1.0 - sig_e)).ln() / k;
        assert!((ep.t_e - t_e_true).abs() <= 2.0 * DT, "t_e = {} vs {}", ep.t_e, t_e_true);
        assert!((ep.d_a - (traj[ep.index_at(ep.t_s)].x - 3.5)).abs() < 1e-12);
    }
}
