//! Per-frame tracking: geometry, features, association, model updates and
//! the track lifecycle.

use image::RgbImage;
use thiserror::Error;

use crate::appearance::{AppearanceModel, Rng};
use crate::assignment::{greedy_min_cost, solve_assignment, ScoreMatrix};
use crate::association::{
    build_candidate_lists, cross_match_value, interpolate_gaps, reidentify, visible_fraction, GroupingState, LostTarget,
    Observation, ReidParams, EPS_DIST,
};
use crate::bbox::BBox;
use crate::config::{ConfigError, TrackerConfig};
use crate::features::{extract_feature_grid, maximum_ellipse_mask, occlusion_clipped_mask, VisibilityMask};
use crate::geometry::{CalibratedCamera, Geometry3D};
use crate::ingest::{DetectionRecord, FrameDetections, TrackEntry, TrackOutput};
use crate::kalman::{gated_distance, measurement_of, TrackState3D};
use crate::parallel::{self, Execution};
use crate::property_model::GaussianPropertyModel;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {got} does not follow frame {previous}")]
    NonMonotonicFrame { previous: u32, got: u32 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
    Terminated,
}

#[derive(Debug, Clone)]
pub struct Track {
    pub identity: u64,
    /// Posterior at the last matched frame.
    pub state: TrackState3D,
    pub appearance: AppearanceModel,
    pub properties: GaussianPropertyModel,
    pub status: TrackStatus,
    pub history: Vec<TrackEntry>,
    pub misses: u32,
    pub hits: u32,
    pub ever_confirmed: bool,
}

impl Track {
    fn last_observed(&self) -> &TrackEntry {
        self.history.last().expect("tracks are created with one observation")
    }

    /// Per-frame ground velocity implied by moving to `foot` at `frame`.
    fn implied_velocity(&self, foot: [f64; 2], frame: u32) -> [f64; 2] {
        let last = self.last_observed();
        let prev = last.foot.unwrap_or(foot);
        let dt = frame.saturating_sub(last.frame).max(1) as f64;
        [(foot[0] - prev[0]) / dt, (foot[1] - prev[1]) / dt]
    }
}

/// One active, confirmed track as reported for a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutput {
    pub identity: u64,
    pub bbox: BBox,
    pub foot: [f64; 2],
}

pub struct Tracker {
    config: TrackerConfig,
    camera: CalibratedCamera,
    mode: Execution,
    rng: Rng,
    ellipse: VisibilityMask,
    tracks: Vec<Track>,
    finished: Vec<Track>,
    next_identity: u64,
    last_frame: Option<u32>,
}

/// How an observation takes part in the main assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Isolated,
    CrossMatched,
    /// Heavily occluded: left out of association entirely.
    Withheld,
}

impl Tracker {
    pub fn new(config: TrackerConfig, camera: CalibratedCamera) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            rng: Rng::new(config.seed),
            ellipse: maximum_ellipse_mask(config.grid_w, config.grid_h),
            config,
            camera,
            mode: Execution::default(),
            tracks: Vec::new(),
            finished: Vec::new(),
            next_identity: 1,
            last_frame: None,
        })
    }

    pub fn with_execution(mut self, mode: Execution) -> Self {
        self.mode = mode;
        self
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Tracks that are not yet terminated.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn observe(&self, image: &RgbImage, detections: &[DetectionRecord]) -> Vec<Observation> {
        let geoms: Vec<(usize, Geometry3D)> = parallel::map(self.mode, detections, |d| self.camera.observation_geometry(&d.bbox).ok())
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (i, g)))
            .filter(|(_, g)| g.depth.is_finite() && g.width3d > 0.0)
            .collect();
        let boxes: Vec<BBox> = geoms.iter().map(|(_, g)| g.bbox).collect();
        let depths: Vec<f64> = geoms.iter().map(|(_, g)| g.depth).collect();
        let cfg = &self.config;
        parallel::map(self.mode, &geoms, |(i, g)| {
            let grid = extract_feature_grid(image, &g.bbox, cfg.grid_w, cfg.grid_h, cfg.features).ok()?;
            let mask = occlusion_clipped_mask(&self.ellipse, &g.bbox, &boxes, &depths, g.depth);
            Some(Observation { detection: *i, geometry: *g, grid, mask })
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Processes one frame and returns the confirmed tracks observed in it.
    pub fn step(&mut self, frame: u32, image: &RgbImage, detections: &[DetectionRecord]) -> Result<Vec<FrameOutput>, PipelineError> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(PipelineError::NonMonotonicFrame { previous, got: frame });
            }
        }
        self.last_frame = Some(frame);
        let cfg = self.config.clone();
        let detections: Vec<DetectionRecord> =
            detections.iter().filter(|d| d.confidence >= cfg.min_confidence).copied().collect();

        // Geometry and features, shared by all scoring below.
        let observations = self.observe(image, &detections);
        let obs_geoms: Vec<Geometry3D> = observations.iter().map(|o| o.geometry).collect();

        // Predictions for every live track; lost tracks extrapolate from
        // their last posterior.
        let predictions: Vec<Geometry3D> = self
            .tracks
            .iter()
            .map(|t| {
                let mut s = t.state.clone();
                s.advance(frame - s.frame, &cfg.kalman);
                s.geometry(&self.camera)
            })
            .collect();
        let lists = build_candidate_lists(&obs_geoms, &predictions, cfg.tau_p, cfg.eta_d, cfg.c_d);

        let roles: Vec<Role> = lists
            .iter()
            .map(|l| match l.state {
                GroupingState::Isolated => Role::Isolated,
                GroupingState::Grouped => {
                    let j = l.observation;
                    let others: Vec<Geometry3D> =
                        obs_geoms.iter().enumerate().filter(|&(k, _)| k != j).map(|(_, g)| *g).collect();
                    if visible_fraction(&obs_geoms[j], &others) > 0.5 {
                        Role::CrossMatched
                    } else {
                        Role::Withheld
                    }
                }
            })
            .collect();

        // Candidate pairs among active tracks, filtered by the property model.
        let active: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| matches!(self.tracks[i].status, TrackStatus::Tentative | TrackStatus::Confirmed))
            .collect();
        let mut allowed = vec![vec![false; observations.len()]; active.len()];
        for (r, &i) in active.iter().enumerate() {
            let track = &self.tracks[i];
            for (j, list) in lists.iter().enumerate() {
                if roles[j] == Role::Withheld || !list.candidates.contains(&i) {
                    continue;
                }
                let g = &obs_geoms[j];
                let v = track.implied_velocity(g.foot, frame);
                allowed[r][j] = track.properties.is_inlier(v, g.width3d, g.height3d, cfg.min_count, cfg.sigma_floor);
            }
        }

        let pairs: Vec<(usize, usize)> = if cfg.cross_matching {
            let k = observations.len();
            let flat = parallel::map_range(self.mode, active.len() * k, |idx| {
                let (r, j) = (idx / k, idx % k);
                if !allowed[r][j] {
                    return 0.0;
                }
                let i = active[r];
                let obs = &observations[j];
                match roles[j] {
                    Role::Isolated => {
                        let d = gated_distance(&predictions[i], &obs.geometry, cfg.eta_d, cfg.c_d);
                        1.0 / d.max(EPS_DIST)
                    }
                    Role::CrossMatched => {
                        let s = self.tracks[i].appearance.similarity(&obs.grid, &obs.mask).unwrap_or(0.0);
                        cross_match_value(s, predictions[i].foot, &obs.geometry, cfg.eta_d, cfg.c_d)
                    }
                    Role::Withheld => 0.0,
                }
            });
            let scores = ScoreMatrix::from_fn(active.len(), k, |r, j| flat[r * k + j]);
            solve_assignment(&scores, 0.0)
                .pairs
                .into_iter()
                .filter(|&(r, j)| scores.get(r, j) > 0.0)
                .collect()
        } else {
            let costs = ScoreMatrix::from_fn(active.len(), observations.len(), |r, j| {
                gated_distance(&predictions[active[r]], &obs_geoms[j], cfg.eta_d, cfg.c_d)
            });
            greedy_min_cost(&costs, |r, j| allowed[r][j]).pairs
        };

        let mut obs_used = vec![false; observations.len()];
        let mut matched_track = vec![None; self.tracks.len()];
        for &(r, j) in &pairs {
            matched_track[active[r]] = Some(j);
            obs_used[j] = true;
        }

        // Matched tracks, in identity order so the rng is consumed
        // deterministically.
        for i in 0..self.tracks.len() {
            let Some(j) = matched_track[i] else { continue };
            self.absorb(i, &observations[j], frame);
            let t = &mut self.tracks[i];
            t.hits += 1;
            if t.status == TrackStatus::Tentative && t.hits >= cfg.confirm_hits {
                t.status = TrackStatus::Confirmed;
                t.ever_confirmed = true;
            }
        }
        // Unmatched active tracks.
        for &i in &active {
            if matched_track[i].is_some() {
                continue;
            }
            let t = &mut self.tracks[i];
            t.misses += 1;
            t.hits = 0;
            t.status = match t.status {
                TrackStatus::Tentative => TrackStatus::Terminated,
                _ if t.misses > cfg.max_coast() => TrackStatus::Lost,
                s => s,
            };
        }

        // Re-identification against observations not claimed by confirmed
        // tracks. Observations held by tentative tracks are eligible: a lost
        // target reclaiming one ends that tentative track.
        if cfg.reidentification {
            let lost_idx: Vec<usize> =
                (0..self.tracks.len()).filter(|&i| self.tracks[i].status == TrackStatus::Lost).collect();
            let holder: Vec<Option<usize>> = (0..observations.len())
                .map(|j| (0..self.tracks.len()).find(|&i| matched_track[i] == Some(j)))
                .collect();
            let free: Vec<usize> = (0..observations.len())
                .filter(|&j| roles[j] != Role::Withheld)
                .filter(|&j| match holder[j] {
                    None => true,
                    Some(i) => self.tracks[i].status == TrackStatus::Tentative,
                })
                .collect();
            let matches = {
                let lost: Vec<LostTarget<'_>> = lost_idx
                    .iter()
                    .map(|&i| {
                        let t = &self.tracks[i];
                        LostTarget {
                            identity: t.identity,
                            model: &t.appearance,
                            state: &t.state,
                            frame_lost: t.state.frame,
                            frames_missing: frame - t.state.frame,
                        }
                    })
                    .collect();
                let obs_refs: Vec<&Observation> = free.iter().map(|&j| &observations[j]).collect();
                let params = ReidParams { tau_s: cfg.tau_s, tau_p: cfg.tau_p, eta_d: cfg.eta_d, c_d: cfg.c_d, fps: cfg.fps };
                reidentify(&lost, &obs_refs, &params, self.mode)
            };
            let mut matches: Vec<(usize, usize)> = matches.into_iter().map(|(r, c)| (lost_idx[r], free[c])).collect();
            matches.sort_unstable();
            for (i, j) in matches {
                if let Some(h) = holder[j] {
                    self.tracks[h].status = TrackStatus::Terminated;
                }
                self.absorb(i, &observations[j], frame);
                let t = &mut self.tracks[i];
                t.history = interpolate_gaps(&t.history);
                t.status = TrackStatus::Confirmed;
                t.misses = 0;
                t.hits = 1;
                obs_used[j] = true;
            }
        }

        // Remaining observations start tentative tracks.
        for (j, obs) in observations.iter().enumerate() {
            if obs_used[j] || roles[j] == Role::Withheld {
                continue;
            }
            self.spawn(obs, frame);
        }

        // Lifecycle bookkeeping.
        let max_lost = cfg.max_lost();
        for t in &mut self.tracks {
            if t.status == TrackStatus::Lost && frame - t.state.frame > max_lost {
                t.status = TrackStatus::Terminated;
            }
        }
        let (done, live): (Vec<Track>, Vec<Track>) =
            std::mem::take(&mut self.tracks).into_iter().partition(|t| t.status == TrackStatus::Terminated);
        self.tracks = live;
        self.finished.extend(done.into_iter().filter(|t| t.ever_confirmed));

        Ok(self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Confirmed)
            .filter_map(|t| {
                let e = t.last_observed();
                (e.frame == frame).then(|| FrameOutput { identity: t.identity, bbox: e.bbox, foot: e.foot.unwrap_or(t.state.foot()) })
            })
            .collect())
    }

    /// Folds one observation into track `i`: Kalman correction, appearance
    /// and property updates, history.
    fn absorb(&mut self, i: usize, obs: &Observation, frame: u32) {
        let cfg = &self.config;
        let t = &mut self.tracks[i];
        let velocity = t.implied_velocity(obs.geometry.foot, frame);
        let dt = frame - t.state.frame;
        t.state.advance(dt, &cfg.kalman);
        t.state.correct(&measurement_of(&obs.geometry), &cfg.kalman);
        let _ = t.appearance.update(&obs.grid, &obs.mask, &mut self.rng, cfg.spatial_weighting);
        t.properties.update(velocity, obs.geometry.width3d, obs.geometry.height3d);
        t.history.push(TrackEntry { frame, bbox: obs.geometry.bbox, foot: Some(obs.geometry.foot), synthetic: false });
        t.misses = 0;
    }

    fn spawn(&mut self, obs: &Observation, frame: u32) {
        let cfg = &self.config;
        let mut appearance = AppearanceModel::new(cfg.grid_w, cfg.grid_h, cfg.features, cfg.thresholds(), cfg.n_max());
        let _ = appearance.update(&obs.grid, &obs.mask, &mut self.rng, cfg.spatial_weighting);
        let status = if cfg.confirm_hits <= 1 { TrackStatus::Confirmed } else { TrackStatus::Tentative };
        self.tracks.push(Track {
            identity: self.next_identity,
            state: TrackState3D::init(&obs.geometry, frame, &cfg.kalman),
            appearance,
            properties: GaussianPropertyModel::new(),
            status,
            history: vec![TrackEntry { frame, bbox: obs.geometry.bbox, foot: Some(obs.geometry.foot), synthetic: false }],
            misses: 0,
            hits: 1,
            ever_confirmed: status == TrackStatus::Confirmed,
        });
        self.next_identity += 1;
    }

    /// Every track that was ever confirmed, gaps interpolated, ordered by
    /// identity.
    pub fn finalize(self) -> Vec<TrackOutput> {
        let mut out: Vec<TrackOutput> = self
            .finished
            .into_iter()
            .chain(self.tracks.into_iter().filter(|t| t.ever_confirmed))
            .map(|t| TrackOutput { identity: t.identity, entries: interpolate_gaps(&t.history) })
            .collect();
        out.sort_by_key(|t| t.identity);
        out
    }

    /// Appearance models of every track confirmed so far, by identity.
    pub fn confirmed_models(&self) -> Vec<(u64, &AppearanceModel)> {
        let mut out: Vec<(u64, &AppearanceModel)> = self
            .finished
            .iter()
            .chain(self.tracks.iter().filter(|t| t.ever_confirmed))
            .map(|t| (t.identity, &t.appearance))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// Runs a tracker over frames `1..=num_frames`, fetching each image on demand.
pub fn run_sequence<E>(
    mut tracker: Tracker,
    num_frames: u32,
    detections: &FrameDetections,
    mut frame: impl FnMut(u32) -> Result<RgbImage, E>,
) -> Result<Vec<TrackOutput>, E>
where
    E: From<PipelineError>,
{
    for f in 1..=num_frames {
        let image = frame(f)?;
        tracker.step(f, &image, detections.frame(f))?;
    }
    Ok(tracker.finalize())
}
