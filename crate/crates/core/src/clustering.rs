//! K-means grouping of merging episodes into aggressive/normal styles.
//!
//! Features are standardized to zero mean and unit variance before
//! clustering; Lloyd iterations run until assignments stop changing,
//! with greedy farthest-point seeding and a fixed number of restarts so
//! small instances reach the global optimum deterministically.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::trajectory::{MergingEpisode, StyleLabel};

/// Clustering inputs of one episode: merging duration plus the gaps and
/// range rates to both neighbors sampled at the lane-change point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StyleFeatures {
    /// Lane-change duration (s).
    pub lcd: f64,
    /// Bumper gap to the leader at the crossing (m).
    pub gap_lead: f64,
    /// Range rate to the leader at the crossing (m/s).
    pub rr_lead: f64,
    /// Bumper gap to the follower at the crossing (m).
    pub gap_follow: f64,
    /// Range rate to the follower at the crossing (m/s).
    pub rr_follow: f64,
    pub lead_valid: bool,
    pub follow_valid: bool,
}

/// Which of the five features participate in clustering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub lcd: bool,
    pub gap_lead: bool,
    pub rr_lead: bool,
    pub gap_follow: bool,
    pub rr_follow: bool,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        FeatureSelection {
            lcd: true,
            gap_lead: true,
            rr_lead: true,
            gap_follow: true,
            rr_follow: true,
        }
    }
}

impl FeatureSelection {
    pub fn dims(&self) -> usize {
        [self.lcd, self.gap_lead, self.rr_lead, self.gap_follow, self.rr_follow]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Projects the selected features into a vector, or `None` when a
    /// selected neighbor feature is invalid.
    pub fn project(&self, f: &StyleFeatures) -> Option<Vec<f64>> {
        if (self.gap_lead || self.rr_lead) && !f.lead_valid {
            return None;
        }
        if (self.gap_follow || self.rr_follow) && !f.follow_valid {
            return None;
        }
        let mut v = Vec::with_capacity(self.dims());
        if self.lcd {
            v.push(f.lcd);
        }
        if self.gap_lead {
            v.push(f.gap_lead);
        }
        if self.rr_lead {
            v.push(f.rr_lead);
        }
        if self.gap_follow {
            v.push(f.gap_follow);
        }
        if self.rr_follow {
            v.push(f.rr_follow);
        }
        Some(v)
    }
}

/// Samples the clustering features of one episode. Missing neighbors at
/// the crossing are marked invalid rather than substituted.
pub fn extract_style_features(episode: &MergingEpisode) -> Result<StyleFeatures> {
    episode.validate()?;
    let lcd = episode.lcd();
    if !(lcd > 0.0) {
        return Err(Error::domain("episode has non-positive merge duration"));
    }
    let ctx = episode.neighbors[episode.index_at(episode.t_lc)];
    Ok(StyleFeatures {
        lcd,
        gap_lead: ctx.gap_lead,
        rr_lead: ctx.range_rate_lead,
        gap_follow: ctx.gap_follow,
        rr_follow: ctx.range_rate_follow,
        lead_valid: ctx.lead_valid,
        follow_valid: ctx.follow_valid,
    })
}

/// Fitted k-means model in standardized feature space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub selection: FeatureSelection,
    /// Per-dimension standardization mean.
    pub means: Vec<f64>,
    /// Per-dimension standardization deviation (always > 0; constant
    /// dimensions fall back to 1).
    pub stds: Vec<f64>,
    /// Cluster centers in standardized space, one row per cluster.
    pub centers: Vec<Vec<f64>>,
    /// Cluster index -> style label.
    pub label_map: Vec<StyleLabel>,
}

/// Diagnostics of one fit.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub model: ClusterModel,
    /// Final within-cluster squared error.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub objective_history: Vec<f64>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    pub restarts: usize,
}

pub const DEFAULT_RESTARTS: usize = 20;
pub const DEFAULT_MAX_ITER: usize = 200;

fn standardize(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let dims = points[0].len();
    let n = points.len() as f64;
    let mut means = vec![0.0; dims];
    for p in points {
        for (m, v) in means.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = vec![0.0; dims];
    for p in points {
        for (s, (v, m)) in stds.iter_mut().zip(p.iter().zip(&means)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    (means, stds)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Within-cluster squared error for a given assignment.
fn objective(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| dist2(p, &centers[a]))
        .sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Greedy farthest-point seeding: first center drawn from the data, each
/// further center is the point farthest from its nearest chosen center
/// (ties broken by index).
fn seed_centers(points: &[Vec<f64>], j: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(j);
    let first = rng.random_range(0..points.len());
    centers.push(points[first].clone());
    while centers.len() < j {
        let mut far_idx = 0;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far_idx = i;
            }
        }
        centers.push(points[far_idx].clone());
    }
    centers
}

struct LloydRun {
    centers: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    objective: f64,
    history: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> LloydRun {
    let j = centers.len();
    let dims = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
    let mut history = Vec::new();
    for _ in 0..max_iter {
        // Recompute centers as the member means.
        let mut sums = vec![vec![0.0; dims]; j];
        let mut counts = vec![0usize; j];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut max_shift = 0.0f64;
        for cj in 0..j {
            if counts[cj] == 0 {
                // Reseed an emptied cluster at the point farthest from
                // its current center.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i1, p1), (i2, p2)| {
                        let d1 = dist2(p1, &centers[assignments[*i1]]);
                        let d2 = dist2(p2, &centers[assignments[*i2]]);
                        d1.partial_cmp(&d2).unwrap().then(i2.cmp(i1))
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[cj] = points[far].clone();
                max_shift = f64::INFINITY;
                continue;
            }
            let new_c: Vec<f64> = sums[cj].iter().map(|s| s / counts[cj] as f64).collect();
            max_shift = max_shift.max(dist2(&new_c, &centers[cj]).sqrt());
            centers[cj] = new_c;
        }
        let new_assignments: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
        history.push(objective(points, &centers, &new_assignments));
        let unchanged = new_assignments == assignments;
        assignments = new_assignments;
        if unchanged || max_shift <= tol {
            break;
        }
    }
    let obj = objective(points, &centers, &assignments);
    LloydRun { centers, assignments, objective: obj, history }
}

/// Fits k-means with `j` clusters on the selected, standardized features.
/// Runs `DEFAULT_RESTARTS` seeded restarts and keeps the lowest objective
/// (ties broken by restart index).
pub fn kmeans_fit(
    features: &[StyleFeatures],
    selection: &FeatureSelection,
    j: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KmeansFit> {
    if j == 0 {
        return Err(Error::config("cluster count must be at least 1"));
    }
    let points_raw: Vec<Vec<f64>> = features
        .iter()
        .filter_map(|f| selection.project(f))
        .collect();
    if points_raw.len() < j {
        return Err(Error::DegenerateInput(format!(
            "{} usable episodes for {} clusters",
            points_raw.len(),
            j
        )));
    }
    for p in &points_raw {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericGuard("non-finite clustering feature".into()));
        }
    }
    let (means, stds) = standardize(&points_raw);
    let points: Vec<Vec<f64>> = points_raw
        .iter()
        .map(|p| p.iter().zip(means.iter().zip(&stds)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();

    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in &points {
        if !distinct.iter().any(|q| dist2(q, p) < 1e-20) {
            distinct.push(p);
        }
        if distinct.len() >= j {
            break;
        }
    }
    if distinct.len() < j {
        return Err(Error::DegenerateInput(format!(
            "only {} distinct points for {} clusters",
            distinct.len(),
            j
        )));
    }

    let mut best: Option<LloydRun> = None;
    for restart in 0..DEFAULT_RESTARTS {
        let mut r = rng::stream(seed, "kmeans-restart", restart as u64);
        let centers = seed_centers(&points, j, &mut r);
        let run = lloyd(&points, centers, max_iter, tol);
        for w in run.history.windows(2) {
            debug_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "objective increased");
        }
        let better = match &best {
            None => true,
            Some(b) => run.objective < b.objective,
        };
        if better {
            best = Some(run);
        }
    }
    let run = best.unwrap();

    let model = ClusterModel {
        selection: selection.clone(),
        means,
        stds,
        centers: run.centers,
        label_map: Vec::new(),
    };
    Ok(KmeansFit {
        model,
        objective: run.objective,
        objective_history: run.history,
        assignments: run.assignments,
        restarts: DEFAULT_RESTARTS,
    })
}

impl ClusterModel {
    /// Standardizes a projected feature vector with the stored stats.
    fn standardize_point(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Assigns a feature vector to its nearest center (squared Euclidean in
/// standardized space; ties go to the lower index).
pub fn kmeans_assign(model: &ClusterModel, f: &StyleFeatures) -> Result<usize> {
    let raw = model
        .selection
        .project(f)
        .ok_or_else(|| Error::domain("feature vector has invalid neighbor entries"))?;
    if model.centers.is_empty() {
        return Err(Error::config("cluster model has no centers"));
    }
    Ok(nearest(&model.centers, &model.standardize_point(&raw)))
}

/// Labels fitted clusters: the cluster with the smaller mean merging
/// duration is aggressive (0), the other normal (1).
pub fn label_clusters(fit: &mut KmeansFit, features: &[StyleFeatures]) -> Result<()> {
    let selection = fit.model.selection.clone();
    let usable: Vec<&StyleFeatures> = features
        .iter()
        .filter(|f| selection.project(f).is_some())
        .collect();
    if usable.len() != fit.assignments.len() {
        return Err(Error::domain(
            "feature list does not match the fitted assignments",
        ));
    }
    let j = fit.model.centers.len();
    let mut lcd_sum = vec![0.0; j];
    let mut count = vec![0usize; j];
    for (f, &a) in usable.iter().zip(&fit.assignments) {
        lcd_sum[a] += f.lcd;
        count[a] += 1;
    }
    if j != 2 {
        return Err(Error::config("labeling is defined for exactly two clusters"));
    }
    let mean0 = lcd_sum[0] / count[0].max(1) as f64;
    let mean1 = lcd_sum[1] / count[1].max(1) as f64;
    if (mean0 - mean1).abs() < 1e-12 {
        return Err(Error::UnresolvedLabel(format!(
            "clusters have equal mean duration {mean0}"
        )));
    }
    fit.model.label_map = if mean0 < mean1 {
        vec![StyleLabel::Aggressive, StyleLabel::Normal]
    } else {
        vec![StyleLabel::Normal, StyleLabel::Aggressive]
    };
    Ok(())
}

/// Predicted style of a feature vector under a labeled model.
pub fn predict_style_label(model: &ClusterModel, f: &StyleFeatures) -> Result<StyleLabel> {
    if model.label_map.len() != model.centers.len() {
        return Err(Error::config("cluster model has not been labeled"));
    }
    Ok(model.label_map[kmeans_assign(model, f)?])
}

/// Fraction of episodes whose cluster label matches `truth`.
pub fn purity(fit: &KmeansFit, truth: &[StyleLabel]) -> Result<f64> {
    if truth.len() != fit.assignments.len() {
        return Err(Error::domain("label list length mismatch"));
    }
    if fit.model.label_map.is_empty() {
        return Err(Error::config("cluster model has not been labeled"));
    }
    let hits = fit
        .assignments
        .iter()
        .zip(truth)
        .filter(|(&a, &t)| fit.model.label_map[a] == t)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(vals: &[f64]) -> Vec<StyleFeatures> {
        vals.iter()
            .map(|&v| StyleFeatures {
                lcd: v,
                gap_lead: 0.0,
                rr_lead: 0.0,
                gap_follow: 0.0,
                rr_follow: 0.0,
                lead_valid: true,
                follow_valid: true,
            })
            .collect()
    }

    fn lcd_only() -> FeatureSelection {
        FeatureSelection {
            lcd: true,
            gap_lead: false,
            rr_lead: false,
            gap_follow: false,
            rr_follow: false,
        }
    }

    /// Fits on raw (unstandardized) 1-D points by bypassing standardization.
    fn fit_raw(points: &[f64], seed: u64) -> KmeansFit {
        let features = feats(points);
        let mut fit = kmeans_fit(&features, &lcd_only(), 2, seed, 100, 0.0).unwrap();
        // Undo standardization on the centers for direct comparison.
        for c in &mut fit.model.centers {
            for (v, (m, s)) in c.iter_mut().zip(fit.model.means.iter().zip(&fit.model.stds)) {
                *v = *v * s + m;
            }
        }
        fit
    }

    #[test]
    fn two_separated_pairs_find_their_means() {
        let fit = fit_raw(&[0.0, 1.0, 10.0, 11.0], 3);
        let mut centers: Vec<f64> = fit.model.centers.iter().map(|c| c[0]).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((centers[0] - 0.5).abs() < 1e-9);
        assert!((centers[1] - 10.5).abs() < 1e-9);
    }

    #[test]
    fn objective_of_separated_pairs_is_one_in_raw_units() {
        // Standardized objective scales by 1/var; undo it analytically.
        let points = [0.0, 1.0, 10.0, 11.0];
        let features = feats(&points);
        let fit = kmeans_fit(&features, &lcd_only(), 2, 3, 100, 0.0).unwrap();
        let var = {
            let mean = points.iter().sum::<f64>() / 4.0;
            points.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / 4.0
        };
        let raw_objective = fit.objective * var;
        assert!((raw_objective - 1.0).abs() < 1e-9, "objective {raw_objective}");
    }

    #[test]
    fn identical_points_are_degenerate() {
        let features = feats(&[2.0, 2.0, 2.0, 2.0]);
        let err = kmeans_fit(&features, &lcd_only(), 2, 3, 100, 0.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateInput(_)));
    }

    #[test]
    fn assign_prefers_lower_index_on_ties() {
        let features = feats(&[0.0, 1.0, 10.0, 11.0]);
        let mut fit = kmeans_fit(&features, &lcd_only(), 2, 3, 100, 0.0).unwrap();
        // Build a model with raw-space centers 0.5 and 10.5 by clearing
        // the standardization.
        fit.model.means = vec![0.0];
        fit.model.stds = vec![1.0];
        fit.model.centers = vec![vec![0.5], vec![10.5]];
        let probe = |v: f64| {
            kmeans_assign(
                &fit.model,
                &StyleFeatures {
                    lcd: v,
                    gap_lead: 0.0,
                    rr_lead: 0.0,
                    gap_follow: 0.0,
                    rr_follow: 0.0,
                    lead_valid: true,
                    follow_valid: true,
                },
            )
            .unwrap()
        };
        assert_eq!(probe(0.5), 0); // exactly a center
        assert_eq!(probe(5.5), 0); // tie -> lower index
        assert_eq!(probe(2.0), 0); // 2.25 vs 72.25
        assert_eq!(probe(9.0), 1);
    }

    #[test]
    fn labeling_marks_shorter_duration_as_aggressive() {
        let short: Vec<f64> = (0..10).map(|i| 4.0 + 0.05 * i as f64).collect();
        let long: Vec<f64> = (0..10).map(|i| 8.0 + 0.05 * i as f64).collect();
        let all: Vec<f64> = short.iter().chain(&long).copied().collect();
        let features = feats(&all);
        let mut fit = kmeans_fit(&features, &lcd_only(), 2, 1, 100, 0.0).unwrap();
        label_clusters(&mut fit, &features).unwrap();
        for (f, &a) in features.iter().zip(&fit.assignments) {
            let lab = fit.model.label_map[a];
            if f.lcd < 6.0 {
                assert_eq!(lab, StyleLabel::Aggressive);
            } else {
                assert_eq!(lab, StyleLabel::Normal);
            }
        }

        // Swapped input order yields the same labeling.
        let rev: Vec<f64> = all.iter().rev().copied().collect();
        let rev_features = feats(&rev);
        let mut rev_fit = kmeans_fit(&rev_features, &lcd_only(), 2, 1, 100, 0.0).unwrap();
        label_clusters(&mut rev_fit, &rev_features).unwrap();
        for (f, &a) in rev_features.iter().zip(&rev_fit.assignments) {
            let lab = rev_fit.model.label_map[a];
            if f.lcd < 6.0 {
                assert_eq!(lab, StyleLabel::Aggressive);
            } else {
                assert_eq!(lab, StyleLabel::Normal);
            }
        }
    }

    #[test]
    fn invalid_neighbors_are_excluded() {
        let mut features = feats(&[1.0, 1.1, 9.0, 9.1, 9.2]);
        features[0].lead_valid = false;
        let fit = kmeans_fit(&features, &FeatureSelection::default(), 2, 3, 100, 0.0).unwrap();
        assert_eq!(fit.assignments.len(), 4);
    }
}
