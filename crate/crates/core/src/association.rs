//! Grouping detection, cross-matching scores, re-identification of lost
//! targets and gap interpolation.

use crate::appearance::{AppearanceError, AppearanceModel};
use crate::assignment::{solve_assignment, ScoreMatrix};
use crate::bbox::BBox;
use crate::features::{FeatureGrid, VisibilityMask};
use crate::geometry::{depth_weight, ground_distance, Geometry3D};
use crate::ingest::TrackEntry;
use crate::kalman::{gate, TrackState3D};
use crate::parallel::{self, Execution};

pub use crate::assignment::{Assignment, ScoreMatrix as Scores};

/// Floor on the foot distance in the cross-matching score, meters.
pub const EPS_DIST: f64 = 1e-3;

/// One detection enriched with geometry, features and visibility.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Index into the frame's detection list.
    pub detection: usize,
    pub geometry: Geometry3D,
    pub grid: FeatureGrid,
    pub mask: VisibilityMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupingState {
    Isolated,
    Grouped,
}

/// Predictions gated to one observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    pub observation: usize,
    pub candidates: Vec<usize>,
    pub state: GroupingState,
}

/// Gates every prediction against every observation. An observation is
/// grouped when more than one prediction passes its gate or its box overlaps
/// another observation's.
pub fn build_candidate_lists(
    observations: &[Geometry3D],
    predictions: &[Geometry3D],
    tau_p: f64,
    eta_d: f64,
    c_d: f64,
) -> Vec<CandidateList> {
    observations
        .iter()
        .enumerate()
        .map(|(j, obs)| {
            let candidates: Vec<usize> = predictions
                .iter()
                .enumerate()
                .filter(|(_, pred)| gate(pred, obs, tau_p, eta_d, c_d))
                .map(|(i, _)| i)
                .collect();
            let overlaps = observations
                .iter()
                .enumerate()
                .any(|(k, other)| k != j && obs.bbox.intersection_area(&other.bbox) > 0.0);
            let state = if candidates.len() > 1 || overlaps {
                GroupingState::Grouped
            } else {
                GroupingState::Isolated
            };
            CandidateList { observation: j, candidates, state }
        })
        .collect()
}

/// Exact area of `target` covered by the union of `covers`, by splitting the
/// target along every cover edge and testing each grid cell once.
pub fn covered_area(target: &BBox, covers: &[BBox]) -> f64 {
    let clipped: Vec<BBox> = covers.iter().filter_map(|c| c.intersection(target)).collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.left(), b.right()]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b.top(), b.bottom()]).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let mut area = 0.0;
    for wx in xs.windows(2) {
        let mx = 0.5 * (wx[0] + wx[1]);
        for wy in ys.windows(2) {
            let my = 0.5 * (wy[0] + wy[1]);
            if clipped.iter().any(|b| b.contains(mx, my)) {
                area += (wx[1] - wx[0]) * (wy[1] - wy[0]);
            }
        }
    }
    area
}

/// Fraction of the observation's box not hidden by strictly nearer boxes.
pub fn visible_fraction(observation: &Geometry3D, others: &[Geometry3D]) -> f64 {
    let nearer: Vec<BBox> = others
        .iter()
        .filter(|o| o.depth < observation.depth)
        .map(|o| o.bbox)
        .collect();
    let area = observation.bbox.area();
    if area <= 0.0 {
        return 0.0;
    }
    (1.0 - covered_area(&observation.bbox, &nearer) / area).clamp(0.0, 1.0)
}

/// Appearance similarity weighted by depth and divided by foot distance.
pub fn cross_match_value(similarity: f64, predicted_foot: [f64; 2], observation: &Geometry3D, eta_d: f64, c_d: f64) -> f64 {
    let dist = ground_distance(predicted_foot, observation.foot).max(EPS_DIST);
    similarity * depth_weight(observation.depth, eta_d, c_d) / dist
}

pub fn cross_match_score(
    model: &AppearanceModel,
    predicted: &Geometry3D,
    observation: &Observation,
    eta_d: f64,
    c_d: f64,
) -> Result<f64, AppearanceError> {
    let s = model.similarity(&observation.grid, &observation.mask)?;
    Ok(cross_match_value(s, predicted.foot, &observation.geometry, eta_d, c_d))
}

/// A target whose appearance model is kept for re-identification.
#[derive(Debug, Clone)]
pub struct LostTarget<'a> {
    pub identity: u64,
    pub model: &'a AppearanceModel,
    pub state: &'a TrackState3D,
    pub frame_lost: u32,
    pub frames_missing: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReidParams {
    pub tau_s: f64,
    pub tau_p: f64,
    pub eta_d: f64,
    pub c_d: f64,
    pub fps: f64,
}

/// Gate radius around a lost target's extrapolated foot point; grows with
/// the time it has been missing.
pub fn reid_radius(params: &ReidParams, frames_missing: u32, depth: f64) -> f64 {
    params.tau_p * (1.0 + frames_missing as f64 / params.fps) * depth_weight(depth, params.eta_d, params.c_d)
}

/// Scores of lost targets (rows) against observations (columns): frozen-model
/// similarity inside the expanded gate, zero outside.
pub fn reid_scores(lost: &[LostTarget<'_>], observations: &[&Observation], params: &ReidParams, mode: Execution) -> ScoreMatrix {
    let k = observations.len();
    let flat = parallel::map_range(mode, lost.len() * k, |idx| {
        let (r, c) = (idx / k, idx % k);
        let target = &lost[r];
        let obs = observations[c];
        let predicted = target.state.foot_ahead(target.frames_missing as f64);
        let dist = ground_distance(predicted, obs.geometry.foot);
        if dist >= reid_radius(params, target.frames_missing, obs.geometry.depth) {
            return 0.0;
        }
        target.model.similarity(&obs.grid, &obs.mask).unwrap_or(0.0)
    });
    let mut scores = ScoreMatrix::zeros(lost.len(), k);
    for (idx, s) in flat.into_iter().enumerate() {
        scores.set(idx / k, idx % k, s);
    }
    scores
}

/// Matches lost targets to observations; returns `(lost index, observation
/// index)` pairs, each scoring at least `tau_s`.
pub fn reidentify(lost: &[LostTarget<'_>], observations: &[&Observation], params: &ReidParams, mode: Execution) -> Vec<(usize, usize)> {
    if lost.is_empty() || observations.is_empty() {
        return Vec::new();
    }
    let scores = reid_scores(lost, observations, params, mode);
    solve_assignment(&scores, params.tau_s)
        .pairs
        .into_iter()
        .filter(|&(r, c)| scores.get(r, c) > 0.0)
        .collect()
}

/// Fills every gap between consecutive entries by linear interpolation in
/// frame index. Filled entries are flagged synthetic.
pub fn interpolate_gaps(entries: &[TrackEntry]) -> Vec<TrackEntry> {
    let mut out = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        if let Some(prev) = i.checked_sub(1).map(|p| &entries[p]) {
            let span = e.frame - prev.frame;
            for step in 1..span {
                let t = step as f64 / span as f64;
                let foot = match (prev.foot, e.foot) {
                    (Some(a), Some(b)) => Some([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]),
                    _ => None,
                };
                out.push(TrackEntry {
                    frame: prev.frame + step,
                    bbox: prev.bbox.lerp(&e.bbox, t),
                    foot,
                    synthetic: true,
                });
            }
        }
        out.push(*e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::{GroupThresholds, Rng};
    use crate::features::FeatureSet;
    use crate::kalman::KalmanParams;

    const ETA: f64 = 1.0 / 30.0;

    fn geom(foot: [f64; 2], depth: f64, bbox: BBox) -> Geometry3D {
        Geometry3D { bbox, foot, depth, velocity: [0.0, 0.0], width3d: 0.5, height3d: 1.8 }
    }

    fn at(foot: [f64; 2], left: f64) -> Geometry3D {
        geom(foot, 0.0, BBox::from_ltwh(left, 0.0, 10.0, 20.0))
    }

    #[test]
    fn isolated_with_far_prediction() {
        let lists = build_candidate_lists(&[at([0.0, 0.0], 0.0)], &[at([10.0, 0.0], 0.0)], 2.0, ETA, 1.0);
        assert!(lists[0].candidates.is_empty());
        assert_eq!(lists[0].state, GroupingState::Isolated);
    }

    #[test]
    fn two_near_predictions_group() {
        let preds = [at([0.5, 0.0], 0.0), at([-0.5, 0.0], 0.0)];
        let lists = build_candidate_lists(&[at([0.0, 0.0], 0.0)], &preds, 2.0, ETA, 1.0);
        assert_eq!(lists[0].candidates, vec![0, 1]);
        assert_eq!(lists[0].state, GroupingState::Grouped);
    }

    #[test]
    fn overlapping_boxes_group() {
        let obs = [at([0.0, 0.0], 0.0), at([20.0, 0.0], 5.0)];
        let preds = [at([0.0, 0.0], 0.0), at([20.0, 0.0], 5.0)];
        let lists = build_candidate_lists(&obs, &preds, 2.0, ETA, 1.0);
        assert_eq!(lists[0].candidates, vec![0]);
        assert_eq!(lists[1].candidates, vec![1]);
        assert!(lists.iter().all(|l| l.state == GroupingState::Grouped));
    }

    /// Inclusion-exclusion over at most two rectangles.
    fn two_rect_union_oracle(target: &BBox, a: &BBox, b: &BBox) -> f64 {
        let ia = a.intersection(target);
        let ib = b.intersection(target);
        let both = match (ia, ib) {
            (Some(x), Some(y)) => x.intersection_area(&y),
            _ => 0.0,
        };
        ia.map_or(0.0, |x| x.area()) + ib.map_or(0.0, |x| x.area()) - both
    }

    #[test]
    fn visible_fraction_cases() {
        let me = geom([0.0, 0.0], 10.0, BBox::from_ltwh(0.0, 0.0, 100.0, 100.0));
        assert_eq!(visible_fraction(&me, &[]), 1.0);

        let half = geom([0.0, 0.0], 5.0, BBox::from_ltwh(-10.0, -10.0, 60.0, 200.0));
        assert_eq!(visible_fraction(&me, &[half]), 0.5);
        // Farther boxes never occlude.
        let behind = geom([0.0, 0.0], 20.0, BBox::from_ltwh(-10.0, -10.0, 60.0, 200.0));
        assert_eq!(visible_fraction(&me, &[behind]), 1.0);

        // Left half and top half overlap in a quarter: union 75%.
        let a = BBox::from_ltwh(0.0, 0.0, 50.0, 100.0);
        let b = BBox::from_ltwh(0.0, 0.0, 100.0, 50.0);
        let expect = 1.0 - two_rect_union_oracle(&me.bbox, &a, &b) / me.bbox.area();
        assert_eq!(expect, 0.25);
        let got = visible_fraction(&me, &[geom([0.0, 0.0], 5.0, a), geom([0.0, 0.0], 6.0, b)]);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn covered_area_matches_oracle_on_random_pairs() {
        use rand::{Rng as _, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let target = BBox::from_ltwh(0.0, 0.0, 50.0, 40.0);
        for _ in 0..500 {
            let mut r = || BBox::from_ltwh(rng.random_range(-20.0..60.0), rng.random_range(-20.0..50.0), rng.random_range(1.0..40.0), rng.random_range(1.0..40.0));
            let (a, b) = (r(), r());
            let got = covered_area(&target, &[a, b]);
            assert!((got - two_rect_union_oracle(&target, &a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_match_arithmetic() {
        let obs = |depth| geom([2.0, 0.0], depth, BBox::from_ltwh(0.0, 0.0, 1.0, 1.0));
        assert!((cross_match_value(0.8, [0.0, 0.0], &obs(0.0), ETA, 1.0) - 0.4).abs() < 1e-12);
        assert!((cross_match_value(0.8, [0.0, 0.0], &obs(30.0), ETA, 1.0) - 0.8).abs() < 1e-12);
        let v = cross_match_value(0.8, [2.0, 0.0], &obs(0.0), ETA, 1.0);
        assert!((v - 0.8 / EPS_DIST).abs() < 1e-9 && v.is_finite());
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let v = cross_match_value(0.5, [2.0 + 0.01 * k as f64, 0.0], &obs(3.0), ETA, 1.0);
            assert!(v < last);
            last = v;
        }
    }

    fn solid_obs(color: [u8; 3], foot: [f64; 2]) -> Observation {
        let (w, h) = (4, 4);
        let values = (0..w * h).flat_map(|_| [color[0], color[1], color[2], 255]).collect();
        Observation {
            detection: 0,
            geometry: geom(foot, 0.0, BBox::from_ltwh(0.0, 0.0, 10.0, 20.0)),
            grid: FeatureGrid { width: w, height: h, channels: 4, values },
            mask: VisibilityMask::full(w, h),
        }
    }

    fn model_of(obs: &Observation, n_max: usize) -> AppearanceModel {
        let mut m = AppearanceModel::new(4, 4, FeatureSet::default(), GroupThresholds::default(), n_max);
        let th = GroupThresholds { color: 1e6, texture: 1e6, edge: 1e6 };
        let mut fill = AppearanceModel::new(4, 4, FeatureSet::default(), th, n_max);
        let mut rng = Rng::new(0);
        for _ in 0..n_max {
            fill.update(&obs.grid, &obs.mask, &mut rng, false).unwrap();
        }
        for u in 0..16 {
            let s: Vec<&[u8]> = (0..n_max).map(|k| fill.sample(u, k)).collect();
            m.set_cell(u, &s);
        }
        m
    }

    fn params() -> ReidParams {
        ReidParams { tau_s: 0.3, tau_p: 2.0, eta_d: ETA, c_d: 1.0, fps: 10.0 }
    }

    fn still_state(foot: [f64; 2]) -> TrackState3D {
        TrackState3D::init(&geom(foot, 0.0, BBox::from_ltwh(0.0, 0.0, 1.0, 1.0)), 1, &KalmanParams::default())
    }

    #[test]
    fn reidentify_identical_appearance() {
        let obs = solid_obs([200, 10, 10], [1.0, 0.0]);
        let model = model_of(&obs, 3);
        let state = still_state([0.0, 0.0]);
        let lost = [LostTarget { identity: 7, model: &model, state: &state, frame_lost: 1, frames_missing: 5 }];
        assert_eq!(reidentify(&lost, &[&obs], &params(), Execution::Sequential), vec![(0, 0)]);

        // Outside the expanded gate: 2 * (1 + 5/10) = 3 m.
        let far = solid_obs([200, 10, 10], [3.5, 0.0]);
        assert!(reidentify(&lost, &[&far], &params(), Execution::Sequential).is_empty());
    }

    #[test]
    fn reidentify_rejects_low_similarity() {
        let obs = solid_obs([200, 10, 10], [0.0, 0.0]);
        let mut model = model_of(&obs, 5);
        // Keep one matching sample per cell out of five: similarity 0.2.
        for u in 0..16 {
            let good = model.sample(u, 0).to_vec();
            let bad = [0u8, 200, 200, 0];
            model.set_cell(u, &[&good, &bad, &bad, &bad, &bad]);
        }
        assert!((model.similarity(&obs.grid, &obs.mask).unwrap() - 0.2).abs() < 1e-12);
        let state = still_state([0.0, 0.0]);
        let lost = [LostTarget { identity: 1, model: &model, state: &state, frame_lost: 1, frames_missing: 1 }];
        assert!(reidentify(&lost, &[&obs], &params(), Execution::Sequential).is_empty());
    }

    #[test]
    fn reidentify_crossed_affinities() {
        // Similarities {0.6, 0.4} and {0.35, 0.55}: the joint optimum keeps
        // the diagonal.
        let o1 = solid_obs([200, 10, 10], [0.0, 0.0]);
        let o2 = solid_obs([10, 10, 200], [0.5, 0.0]);
        let mixed = |a: usize, b: usize| {
            let mut m = AppearanceModel::new(4, 4, FeatureSet::default(), GroupThresholds::default(), 20);
            let v1 = o1.grid.cell(0).to_vec();
            let v2 = o2.grid.cell(0).to_vec();
            let filler = vec![100u8, 100, 100, 0];
            let mut samples: Vec<&[u8]> = Vec::new();
            samples.extend(std::iter::repeat_n(v1.as_slice(), a));
            samples.extend(std::iter::repeat_n(v2.as_slice(), b));
            samples.extend(std::iter::repeat_n(filler.as_slice(), 20 - a - b));
            for u in 0..16 {
                m.set_cell(u, &samples);
            }
            m
        };
        let m1 = mixed(12, 8);
        let m2 = mixed(7, 11);
        assert!((m1.similarity(&o1.grid, &o1.mask).unwrap() - 0.6).abs() < 1e-12);
        assert!((m2.similarity(&o2.grid, &o2.mask).unwrap() - 0.55).abs() < 1e-12);
        let s1 = still_state([0.0, 0.0]);
        let s2 = still_state([0.5, 0.0]);
        let lost = [
            LostTarget { identity: 1, model: &m1, state: &s1, frame_lost: 1, frames_missing: 2 },
            LostTarget { identity: 2, model: &m2, state: &s2, frame_lost: 1, frames_missing: 2 },
        ];
        let mut got = reidentify(&lost, &[&o1, &o2], &params(), Execution::Parallel);
        got.sort();
        assert_eq!(got, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn interpolation_fills_midpoints() {
        let e = |frame, x: f64| TrackEntry {
            frame,
            bbox: BBox::from_ltwh(10.0 * x, 0.0, 10.0, 20.0),
            foot: Some([x, 0.0]),
            synthetic: false,
        };
        let out = interpolate_gaps(&[e(1, 0.0), e(3, 2.0)]);
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].frame, 2);
        assert_eq!(out[1].foot, Some([1.0, 0.0]));
        assert!(out[1].synthetic && !out[0].synthetic && !out[2].synthetic);

        let contiguous = [e(4, 0.0), e(5, 1.0)];
        assert_eq!(interpolate_gaps(&contiguous), contiguous.to_vec());

        let out = interpolate_gaps(&[e(1, 0.0), e(5, 4.0)]);
        let xs: Vec<f64> = out.iter().map(|t| t.foot.unwrap()[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out.iter().filter(|t| t.synthetic).count(), 3);
    }
}
