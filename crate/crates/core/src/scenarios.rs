//! Deterministic generator of normal/aggressive merging episodes and of
//! the ego-interaction scenarios, standing in for the private drone
//! dataset.
//!
//! The longitudinal velocity is an explicit function of time (base speed
//! plus a bounded oscillation, a speed hump around the crossing, and for
//! aggressive drivers two deceleration pulses); position integrates it
//! with a per-step Simpson rule. The lateral motion is a logistic
//! S-curve between the lane centerlines whose rate constant is solved so
//! the realized lane-change duration matches the drawn one. Merges are
//! anchored to a fixed longitudinal position (the end of the ramp), so
//! the merge location is predictable from the trajectory itself.
//!
//! Everything is a pure function of (style, params, seed); per-episode
//! randomness comes from named sub-streams of the dataset seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{
    attach_neighbors, EpisodeRecord, ExtractionParams, LaneGeometry, MergingEpisode,
    NeighborContext, StyleLabel, VehicleState,
};
use crate::DT;

/// Lane layout of the merge area plus the longitudinal position where
/// the ramp forces vehicles across the boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MergeGeometry {
    /// Target lane, left of the boundary.
    pub target_lane_left_x: f64,
    /// Shared lane width (m).
    pub lane_width: f64,
    /// Longitudinal position of the lane-change point (m).
    pub merge_point_y: f64,
}

impl Default for MergeGeometry {
    fn default() -> Self {
        MergeGeometry {
            target_lane_left_x: 0.0,
            lane_width: 3.5,
            merge_point_y: 500.0,
        }
    }
}

impl MergeGeometry {
    pub const TARGET_LANE_ID: u32 = 1;
    pub const RAMP_LANE_ID: u32 = 0;

    pub fn target_lane(&self) -> LaneGeometry {
        LaneGeometry::new(Self::TARGET_LANE_ID, self.target_lane_left_x, self.lane_width).unwrap()
    }

    pub fn ramp_lane(&self) -> LaneGeometry {
        LaneGeometry::new(
            Self::RAMP_LANE_ID,
            self.target_lane_left_x + self.lane_width,
            self.lane_width,
        )
        .unwrap()
    }

    pub fn lanes(&self) -> Vec<LaneGeometry> {
        vec![self.target_lane(), self.ramp_lane()]
    }

    /// Boundary between ramp and target lane.
    pub fn boundary_x(&self) -> f64 {
        self.target_lane_left_x + self.lane_width
    }
}

/// Longitudinal speed template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedProfile {
    /// Mean cruise speed (m/s).
    pub base: f64,
    /// Uniform jitter on the base speed (m/s).
    pub base_jitter: f64,
    /// Sinusoidal oscillation amplitude (m/s).
    pub oscillation_amplitude: f64,
    /// Oscillation period (s).
    pub oscillation_period: f64,
    /// Peak of the speed hump around the crossing (m/s).
    pub merge_boost: f64,
    /// Hump center relative to the crossing (s); positive means the peak
    /// comes after the vehicle crosses the boundary.
    pub boost_offset: f64,
    /// Pre-peak half-width of the hump (s).
    pub boost_rise: f64,
    /// Post-peak half-width of the hump (s).
    pub boost_fall: f64,
    /// Depth of the deceleration pulses (m/s); zero disables them.
    pub pulse_depth: f64,
    /// Pulse centers, in seconds before the nominal crossing.
    pub pulse_lead_times: Vec<f64>,
    /// Gaussian half-width of each pulse (s).
    pub pulse_width: f64,
}

/// Per-channel measurement noise (standard deviations).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NoiseStd {
    pub x: f64,
    pub y: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub a_y: f64,
}

/// Everything that shapes one style's episode population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StyleParams {
    /// Mean lane-change duration (s).
    pub mean_lcd: f64,
    /// Uniform jitter on the duration (s).
    pub lcd_jitter: f64,
    pub speed: SpeedProfile,
    /// Multiplier on the duration-matched sigmoid rate; values above 1
    /// sharpen the S-curve (and shorten the realized duration).
    pub lateral_steepness: f64,
    /// Mean bumper gap to the target-lane leader at the crossing (m).
    pub gap_at_merge: f64,
    /// Uniform jitter on both neighbor gaps (m).
    pub gap_jitter: f64,
    /// Mean bumper gap to the target-lane follower at the crossing (m).
    pub follow_gap: f64,
    /// Mean neighbor speed offset from the drawn base speed (m/s).
    pub neighbor_speed_offset: f64,
    /// Uniform jitter on neighbor speeds (m/s).
    pub neighbor_speed_jitter: f64,
    /// Episode length (s).
    pub duration: f64,
    pub noise_std: NoiseStd,
}

impl StyleParams {
    pub fn default_for(style: StyleLabel) -> Self {
        match style {
            StyleLabel::Normal => StyleParams {
                mean_lcd: 16.0,
                lcd_jitter: 2.0,
                speed: SpeedProfile {
                    base: 13.5,
                    base_jitter: 0.4,
                    oscillation_amplitude: 0.25,
                    oscillation_period: 9.0,
                    merge_boost: 1.8,
                    boost_offset: 0.0,
                    boost_rise: 6.0,
                    boost_fall: 2.0,
                    pulse_depth: 0.0,
                    pulse_lead_times: vec![],
                    pulse_width: 1.2,
                },
                lateral_steepness: 1.0,
                gap_at_merge: 25.0,
                gap_jitter: 4.0,
                follow_gap: 22.0,
                neighbor_speed_offset: -0.2,
                neighbor_speed_jitter: 0.3,
                duration: 60.0,
                noise_std: NoiseStd::default(),
            },
            StyleLabel::Aggressive => StyleParams {
                mean_lcd: 10.0,
                lcd_jitter: 1.5,
                speed: SpeedProfile {
                    base: 13.9,
                    base_jitter: 0.5,
                    oscillation_amplitude: 0.7,
                    oscillation_period: 7.0,
                    merge_boost: 1.5,
                    boost_offset: 2.0,
                    boost_rise: 5.0,
                    boost_fall: 4.0,
                    pulse_depth: 1.6,
                    pulse_lead_times: vec![20.0, 4.0],
                    pulse_width: 1.2,
                },
                lateral_steepness: 1.0,
                gap_at_merge: 12.0,
                gap_jitter: 3.0,
                follow_gap: 10.0,
                neighbor_speed_offset: -0.2,
                neighbor_speed_jitter: 0.3,
                duration: 60.0,
                noise_std: NoiseStd::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_lcd > 0.0) {
            return Err(Error::config("mean_lcd must be > 0"));
        }
        if self.lcd_jitter < 0.0 || self.lcd_jitter >= self.mean_lcd {
            return Err(Error::config("lcd_jitter must be in [0, mean_lcd)"));
        }
        if self.gap_at_merge < 0.0 || self.follow_gap < 0.0 {
            return Err(Error::config("gaps must be >= 0"));
        }
        if self.speed.oscillation_amplitude < 0.0 || self.speed.merge_boost < 0.0 {
            return Err(Error::config("speed amplitudes must be >= 0"));
        }
        if !(self.speed.oscillation_period > 0.0) {
            return Err(Error::config("oscillation_period must be > 0"));
        }
        if !(self.lateral_steepness > 0.0) {
            return Err(Error::config("lateral_steepness must be > 0"));
        }
        let worst = self.speed.base
            - self.speed.base_jitter
            - self.speed.oscillation_amplitude
            - self.speed.pulse_depth;
        if worst <= 1.0 {
            return Err(Error::config(
                "speed profile can stall: base must exceed jitter + oscillation + pulse depth by 1 m/s",
            ));
        }
        if !(self.duration > 0.0) {
            return Err(Error::config("duration must be > 0"));
        }
        Ok(())
    }
}

/// One ego-interaction scenario: an HDV episode plus the ego's initial
/// longitudinal state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub style: StyleLabel,
    pub params: StyleParams,
    pub seed: u64,
    /// Simulated span (s); must cover the episode.
    pub duration: f64,
    /// Initial ego speed (m/s).
    pub ads_initial_v: f64,
    /// Explicit initial ego position (m). When absent the ego is placed
    /// so that, cruising undisturbed, its bumper gap to the HDV at the
    /// merge instant equals `merge_gap_target`.
    pub ads_initial_y: Option<f64>,
    /// Target bumper gap at the merge instant for automatic placement (m).
    pub merge_gap_target: f64,
}

impl ScenarioSpec {
    pub fn with_defaults(style: StyleLabel, seed: u64) -> Self {
        let params = StyleParams::default_for(style);
        ScenarioSpec {
            style,
            duration: params.duration,
            params,
            seed,
            ads_initial_v: 13.72,
            ads_initial_y: None,
            merge_gap_target: match style {
                StyleLabel::Aggressive => 1.5,
                StyleLabel::Normal => 3.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.duration + 1e-9 < self.params.duration {
            return Err(Error::config("scenario duration must cover the episode"));
        }
        Ok(())
    }
}

/// Drawn per-episode quantities, kept so tests and the scenario runner
/// can reach the exact template values.
#[derive(Debug, Clone)]
pub struct EpisodeDraw {
    pub lcd: f64,
    pub base_speed: f64,
    pub oscillation_phase: f64,
    pub gap_lead: f64,
    pub gap_follow: f64,
    pub lead_speed: f64,
    pub follow_speed: f64,
    pub hdv_length: f64,
    pub hdv_width: f64,
    /// Crossing time of the oscillation-only profile; pulse and hump
    /// centers are anchored to it (s).
    pub nominal_cross_t: f64,
    /// Sigmoid rate constant of the lateral S-curve (1/s).
    pub lateral_rate: f64,
    /// Continuous (un-snapped) crossing time of the full profile (s).
    pub t_lc_exact: f64,
}

const NEIGHBOR_LENGTH: f64 = 4.5;
const NEIGHBOR_WIDTH: f64 = 1.8;

fn uniform(rng: &mut ChaCha8Rng, center: f64, half_width: f64) -> f64 {
    center + (rng.random::<f64>() * 2.0 - 1.0) * half_width
}

/// Box-Muller standard normal; always consumes two uniforms.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Speed template terms beyond the constant base.
fn speed_extra(speed: &SpeedProfile, t: f64, phase: f64, nominal_cross_t: f64) -> f64 {
    let mut v = speed.oscillation_amplitude
        * (2.0 * std::f64::consts::PI * (t - phase) / speed.oscillation_period).sin();
    let center = nominal_cross_t + speed.boost_offset;
    let tau = if t <= center { speed.boost_rise } else { speed.boost_fall };
    v += speed.merge_boost * (-((t - center) / tau).powi(2)).exp();
    for &lead in &speed.pulse_lead_times {
        let c = nominal_cross_t - lead;
        v -= speed.pulse_depth * (-((t - c) / speed.pulse_width).powi(2)).exp();
    }
    v
}

fn speed_template(speed: &SpeedProfile, t: f64, base: f64, phase: f64, nominal_cross_t: f64) -> f64 {
    base + speed_extra(speed, t, phase, nominal_cross_t)
}

/// d/dt of the speed template (the recorded longitudinal acceleration).
fn accel_template(speed: &SpeedProfile, t: f64, phase: f64, nominal_cross_t: f64) -> f64 {
    let omega = 2.0 * std::f64::consts::PI / speed.oscillation_period;
    let mut a = speed.oscillation_amplitude * omega * (omega * (t - phase)).cos();
    let center = nominal_cross_t + speed.boost_offset;
    let tau = if t <= center { speed.boost_rise } else { speed.boost_fall };
    let u = (t - center) / tau;
    a += speed.merge_boost * (-u * u).exp() * (-2.0 * u / tau);
    for &lead in &speed.pulse_lead_times {
        let c = nominal_cross_t - lead;
        let u = (t - c) / speed.pulse_width;
        a -= speed.pulse_depth * (-u * u).exp() * (-2.0 * u / speed.pulse_width);
    }
    a
}

/// Solves the sigmoid rate k so the threshold-defined duration equals
/// `lcd`: LCD(k) = (u_e - u_s(k)) / k, strictly decreasing in k.
fn solve_lateral_rate(lcd: f64, lane_width: f64, extraction: &ExtractionParams) -> Result<f64> {
    let realized = |k: f64| -> f64 {
        let q = extraction.onset_rate_threshold / (lane_width * k);
        if q >= 0.25 {
            return f64::INFINITY;
        }
        let sig_s = 0.5 * (1.0 - (1.0 - 4.0 * q).sqrt());
        let u_s = (sig_s / (1.0 - sig_s)).ln();
        let sig_e = 1.0 - extraction.settle_band / lane_width;
        let u_e = (sig_e / (1.0 - sig_e)).ln();
        (u_e - u_s) / k
    };
    let (mut lo, mut hi) = (1e-3, 50.0);
    if realized(hi) > lcd || realized(lo) < lcd {
        return Err(Error::config(format!("no sigmoid rate realizes LCD = {lcd} s")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if realized(mid) > lcd {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Threshold-defined onset/settle offsets from the crossing for rate k:
/// returns (t_s - t_lc, t_e - t_lc).
fn event_offsets(k: f64, lane_width: f64, extraction: &ExtractionParams) -> (f64, f64) {
    let q = extraction.onset_rate_threshold / (lane_width * k);
    let sig_s = 0.5 * (1.0 - (1.0 - 4.0 * q).sqrt());
    let u_s = (sig_s / (1.0 - sig_s)).ln();
    let sig_e = 1.0 - extraction.settle_band / lane_width;
    let u_e = (sig_e / (1.0 - sig_e)).ln();
    (u_s / k, u_e / k)
}

/// Generates one merging episode with the default merge geometry.
pub fn generate_episode(
    style: StyleLabel,
    params: &StyleParams,
    seed: u64,
) -> Result<EpisodeRecord> {
    generate_episode_in(&MergeGeometry::default(), style, params, seed).map(|(rec, _)| rec)
}

/// Generates one episode and also returns the drawn template values.
pub fn generate_episode_in(
    geometry: &MergeGeometry,
    style: StyleLabel,
    params: &StyleParams,
    seed: u64,
) -> Result<(EpisodeRecord, EpisodeDraw)> {
    params.validate()?;
    let extraction = ExtractionParams::default();
    let mut rng = rng::stream(seed, "episode-draw", 0);

    let lcd = uniform(&mut rng, params.mean_lcd, params.lcd_jitter);
    let base = uniform(&mut rng, params.speed.base, params.speed.base_jitter);
    let phase = rng.random::<f64>() * params.speed.oscillation_period;
    let gap_lead = uniform(&mut rng, params.gap_at_merge, params.gap_jitter).max(0.5);
    let gap_follow = uniform(&mut rng, params.follow_gap, params.gap_jitter).max(0.5);
    let lead_speed = base + uniform(&mut rng, params.neighbor_speed_offset, params.neighbor_speed_jitter);
    let follow_speed = base + uniform(&mut rng, params.neighbor_speed_offset, params.neighbor_speed_jitter);
    let hdv_length = uniform(&mut rng, 4.55, 0.35);
    let hdv_width = uniform(&mut rng, 1.8, 0.1);

    // Crossing of the oscillation-only profile anchors hump and pulses.
    let nominal_cross_t = {
        let omega = 2.0 * std::f64::consts::PI / params.speed.oscillation_period;
        let y0_at = |t: f64| {
            base * t
                - params.speed.oscillation_amplitude / omega
                    * ((omega * (t - phase)).cos() - (omega * (0.0 - phase)).cos())
        };
        bisect(|t| y0_at(t) - geometry.merge_point_y, 1.0, params.duration * 4.0)?
    };

    let lane_width = geometry.lane_width;
    let rate = params.lateral_steepness * solve_lateral_rate(lcd, lane_width, &extraction)?;

    // Sample the longitudinal speed and integrate position (Simpson).
    let n_steps = crate::seconds_to_steps(params.duration) + 1;
    let v_of = |t: f64| speed_template(&params.speed, t, base, phase, nominal_cross_t);
    let mut y = vec![0.0f64; n_steps];
    let mut v = vec![0.0f64; n_steps];
    v[0] = v_of(0.0);
    for k in 1..n_steps {
        let t0 = (k - 1) as f64 * DT;
        let t1 = k as f64 * DT;
        v[k] = v_of(t1);
        y[k] = y[k - 1] + DT / 6.0 * (v[k - 1] + 4.0 * v_of(0.5 * (t0 + t1)) + v[k]);
    }

    // Continuous crossing time of the full profile.
    let k_cross = y
        .iter()
        .position(|&yy| yy >= geometry.merge_point_y)
        .ok_or_else(|| Error::config("duration too short: vehicle never reaches the merge point"))?;
    if k_cross == 0 {
        return Err(Error::config("merge point is behind the start position"));
    }
    let t_lc_exact = {
        let t_prev = (k_cross - 1) as f64 * DT;
        let v_mid = 0.5 * (v[k_cross - 1] + v[k_cross]);
        t_prev + (geometry.merge_point_y - y[k_cross - 1]) / v_mid.max(1e-9)
    };

    // Ground-truth events from the lateral closed form, snapped to grid.
    let (off_s, off_e) = event_offsets(rate, lane_width, &extraction);
    let t_s_exact = t_lc_exact + off_s;
    let t_e_exact = t_lc_exact + off_e;
    let snap = |t: f64| (t / DT).round() * DT;
    let (t_s, t_lc, t_e) = (snap(t_s_exact), snap(t_lc_exact), snap(t_e_exact));
    if t_s < extraction.onset_sustain + DT {
        return Err(Error::config("merge onset falls before the episode start"));
    }
    if t_e + extraction.settle_sustain + 1.0 > params.duration {
        return Err(Error::config("duration too short: vehicle cannot settle before the end"));
    }

    let boundary = geometry.boundary_x();
    let origin_center = geometry.ramp_lane().centerline_x();
    let target_center = geometry.target_lane().centerline_x();
    let dx = target_center - origin_center;

    let mut noise = rng::stream(seed, "episode-noise", 0);
    let states: Vec<VehicleState> = (0..n_steps)
        .map(|k| {
            let t = k as f64 * DT;
            let sig = logistic(rate * (t - t_lc_exact));
            let x = origin_center + dx * sig;
            let v_x = dx * rate * sig * (1.0 - sig);
            let a_y = accel_template(&params.speed, t, phase, nominal_cross_t);
            let e = [
                gauss(&mut noise),
                gauss(&mut noise),
                gauss(&mut noise),
                gauss(&mut noise),
                gauss(&mut noise),
            ];
            let x = x + params.noise_std.x * e[0];
            VehicleState {
                t,
                x,
                y: y[k] + params.noise_std.y * e[1],
                v_x: v_x + params.noise_std.v_x * e[2],
                v_y: v[k] + params.noise_std.v_y * e[3],
                a_y: a_y + params.noise_std.a_y * e[4],
                lane_id: if x > boundary {
                    MergeGeometry::RAMP_LANE_ID
                } else {
                    MergeGeometry::TARGET_LANE_ID
                },
                length: hdv_length,
                width: hdv_width,
            }
        })
        .collect();

    // Neighbors drive the target lane at constant speed, placed so the
    // bumper gaps at the crossing equal the drawn gaps.
    let lead: Vec<VehicleState> = (0..n_steps)
        .map(|k| {
            let t = k as f64 * DT;
            VehicleState {
                t,
                x: target_center,
                y: geometry.merge_point_y + gap_lead + NEIGHBOR_LENGTH + lead_speed * (t - t_lc_exact),
                v_x: 0.0,
                v_y: lead_speed,
                a_y: 0.0,
                lane_id: MergeGeometry::TARGET_LANE_ID,
                length: NEIGHBOR_LENGTH,
                width: NEIGHBOR_WIDTH,
            }
        })
        .collect();
    let follow: Vec<VehicleState> = (0..n_steps)
        .map(|k| {
            let t = k as f64 * DT;
            VehicleState {
                t,
                x: target_center,
                y: geometry.merge_point_y - gap_follow - NEIGHBOR_LENGTH
                    + follow_speed * (t - t_lc_exact),
                v_x: 0.0,
                v_y: follow_speed,
                a_y: 0.0,
                lane_id: MergeGeometry::TARGET_LANE_ID,
                length: NEIGHBOR_LENGTH,
                width: NEIGHBOR_WIDTH,
            }
        })
        .collect();

    let k_s = (t_s / DT).round() as usize;
    let mut episode = MergingEpisode {
        vehicle_id: 0,
        d_a: states[k_s].x - geometry.ramp_lane().left_boundary_x,
        neighbors: vec![NeighborContext::default(); n_steps],
        states,
        t_s,
        t_lc,
        t_e,
        style: Some(style),
    };
    attach_neighbors(&mut episode, Some(&lead), Some(&follow))?;
    episode.validate()?;

    let draw = EpisodeDraw {
        lcd,
        base_speed: base,
        oscillation_phase: phase,
        gap_lead,
        gap_follow,
        lead_speed,
        follow_speed,
        hdv_length,
        hdv_width,
        nominal_cross_t,
        lateral_rate: rate,
        t_lc_exact,
    };
    Ok((
        EpisodeRecord {
            episode,
            lead: Some(lead),
            follow: Some(follow),
        },
        draw,
    ))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::config("bisection bracket does not contain a root"));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generates a labeled dataset: `round(n * aggressive_fraction)`
/// aggressive episodes first, then normal ones. Vehicle ids are assigned
/// in blocks of three (merging vehicle, lead, follow).
pub fn generate_dataset(
    n: usize,
    aggressive_fraction: f64,
    seed: u64,
    aggressive: &StyleParams,
    normal: &StyleParams,
) -> Result<Vec<EpisodeRecord>> {
    if !(0.0..=1.0).contains(&aggressive_fraction) {
        return Err(Error::config("aggressive_fraction must be in [0, 1]"));
    }
    let n_aggressive = (n as f64 * aggressive_fraction).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (style, params) = if i < n_aggressive {
            (StyleLabel::Aggressive, aggressive)
        } else {
            (StyleLabel::Normal, normal)
        };
        let episode_seed = rng::derive_seed(seed, "dataset-episode", i as u64);
        let mut record = generate_episode(style, params, episode_seed)?;
        record.episode.vehicle_id = (i as u64) * 3;
        out.push(record);
    }
    Ok(out)
}
