//! Constant-velocity ground-plane Kalman filter over
//! `(X, Y, V_X, V_Y, W, H)` and the depth-compensated association gate.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::{depth_weight, ground_distance, CalibratedCamera, Geometry3D};

pub type StateVector = SVector<f64, 6>;
pub type StateCovariance = SMatrix<f64, 6, 6>;
pub type Measurement = SVector<f64, 4>;

/// Noise parameters. Process densities are per frame; the discrete process
/// noise over `dt` frames is the exact integral of a continuous white-noise
/// model, so predicting over `a` then `b` frames equals predicting `a + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    pub q_pos: f64,
    pub q_vel: f64,
    pub q_size: f64,
    pub r_pos: f64,
    pub r_size: f64,
    pub init_sigma_pos: f64,
    pub init_sigma_vel: f64,
    pub init_sigma_size: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            q_pos: 1e-2,
            q_vel: 1e-2,
            q_size: 1e-4,
            r_pos: 5e-2,
            r_size: 1e-2,
            init_sigma_pos: 0.5,
            init_sigma_vel: 1.0,
            init_sigma_size: 0.2,
        }
    }
}

impl KalmanParams {
    pub fn transition(dt: f64) -> StateCovariance {
        let mut f = StateCovariance::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        f
    }

    /// Discrete process noise accumulated over `dt` frames.
    pub fn process_noise(&self, dt: f64) -> StateCovariance {
        let mut q = StateCovariance::zeros();
        for (p, v) in [(0, 2), (1, 3)] {
            q[(p, p)] = self.q_pos * dt + self.q_vel * dt.powi(3) / 3.0;
            q[(p, v)] = self.q_vel * dt * dt / 2.0;
            q[(v, p)] = q[(p, v)];
            q[(v, v)] = self.q_vel * dt;
        }
        q[(4, 4)] = self.q_size * dt;
        q[(5, 5)] = self.q_size * dt;
        q
    }

    pub fn measurement_noise(&self) -> SMatrix<f64, 4, 4> {
        SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::new(self.r_pos, self.r_pos, self.r_size, self.r_size))
    }

    pub fn observation_matrix() -> SMatrix<f64, 4, 6> {
        let mut h = SMatrix::<f64, 4, 6>::zeros();
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        h[(2, 4)] = 1.0;
        h[(3, 5)] = 1.0;
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState3D {
    pub x: StateVector,
    pub covariance: StateCovariance,
    /// Frame the state refers to.
    pub frame: u32,
}

impl TrackState3D {
    pub fn init(geom: &Geometry3D, frame: u32, params: &KalmanParams) -> Self {
        let x = StateVector::from_column_slice(&[geom.foot[0], geom.foot[1], 0.0, 0.0, geom.width3d, geom.height3d]);
        let (sp, sv, ss) = (
            params.init_sigma_pos.powi(2),
            params.init_sigma_vel.powi(2),
            params.init_sigma_size.powi(2),
        );
        let covariance = StateCovariance::from_diagonal(&StateVector::from_column_slice(&[sp, sp, sv, sv, ss, ss]));
        Self { x, covariance, frame }
    }

    pub fn foot(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.x[2], self.x[3]]
    }

    /// Mean foot point `dt` frames ahead, without touching the state.
    pub fn foot_ahead(&self, dt: f64) -> [f64; 2] {
        [self.x[0] + self.x[2] * dt, self.x[1] + self.x[3] * dt]
    }

    /// Advances the state by `dt` frames.
    pub fn advance(&mut self, dt: u32, params: &KalmanParams) {
        let dtf = dt as f64;
        let f = KalmanParams::transition(dtf);
        self.x = f * self.x;
        self.covariance = f * self.covariance * f.transpose() + params.process_noise(dtf);
        symmetrize(&mut self.covariance);
        self.frame += dt;
    }

    /// Advances by `dt` frames and returns the predicted observation.
    pub fn predict(&mut self, dt: u32, params: &KalmanParams, camera: &CalibratedCamera) -> Geometry3D {
        self.advance(dt, params);
        self.geometry(camera)
    }

    /// The observation this state implies under `camera`.
    pub fn geometry(&self, camera: &CalibratedCamera) -> Geometry3D {
        let foot = self.foot();
        let (w, h) = (self.x[4].max(1e-3), self.x[5].max(1e-3));
        let bbox = camera
            .project_box(foot, w, h)
            .unwrap_or_else(|| crate::bbox::BBox::new(0.0, 0.0, 1.0, 1.0));
        Geometry3D {
            bbox,
            foot,
            depth: camera.ground_depth(foot),
            velocity: self.velocity(),
            width3d: w,
            height3d: h,
        }
    }

    /// Kalman correction with `(X, Y, W, H)`. Returns the normalized
    /// innovation squared of the measurement against the prior.
    pub fn correct(&mut self, z: &Measurement, params: &KalmanParams) -> f64 {
        let h = KalmanParams::observation_matrix();
        let r = params.measurement_noise();
        let innovation = z - h * self.x;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let gain = self.covariance * h.transpose() * s_inv;
        self.x += gain * innovation;
        // Joseph form keeps the covariance positive definite.
        let i_kh = StateCovariance::identity() - gain * h;
        self.covariance = i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        symmetrize(&mut self.covariance);
        (innovation.transpose() * s_inv * innovation)[0]
    }
}

pub fn measurement_of(geom: &Geometry3D) -> Measurement {
    Measurement::new(geom.foot[0], geom.foot[1], geom.width3d, geom.height3d)
}

fn symmetrize(m: &mut StateCovariance) {
    *m = (*m + m.transpose()) * 0.5;
}

/// Depth-compensated distance between a predicted and an observed foot point.
pub fn gated_distance(predicted: &Geometry3D, observation: &Geometry3D, eta_d: f64, c_d: f64) -> f64 {
    ground_distance(predicted.foot, observation.foot) / depth_weight(observation.depth, eta_d, c_d)
}

pub fn gate(predicted: &Geometry3D, observation: &Geometry3D, tau_p: f64, eta_d: f64, c_d: f64) -> bool {
    gated_distance(predicted, observation, eta_d, c_d) < tau_p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use proptest::prelude::*;

    fn geom(foot: [f64; 2], depth: f64) -> Geometry3D {
        Geometry3D {
            bbox: BBox::new(0.0, 0.0, 10.0, 20.0),
            foot,
            depth,
            velocity: [0.0, 0.0],
            width3d: 0.5,
            height3d: 1.8,
        }
    }

    fn state(x: [f64; 6]) -> TrackState3D {
        let mut s = TrackState3D::init(&geom([0.0, 0.0], 0.0), 1, &KalmanParams::default());
        s.x = StateVector::from_column_slice(&x);
        s
    }

    #[test]
    fn init_copies_geometry() {
        let p = KalmanParams::default();
        let g = geom([1.0, 2.0], 5.0);
        let s = TrackState3D::init(&g, 3, &p);
        assert_eq!(s.x.as_slice(), &[1.0, 2.0, 0.0, 0.0, 0.5, 1.8]);
        let d = s.covariance.diagonal();
        let ss = p.init_sigma_size.powi(2);
        assert_eq!(d.as_slice(), &[0.25, 0.25, 1.0, 1.0, ss, ss]);
        assert_eq!(s, TrackState3D::init(&g, 3, &p));
    }

    #[test]
    fn constant_velocity_prediction() {
        let p = KalmanParams::default();
        let mut a = state([0.0, 0.0, 1.0, 0.0, 0.5, 1.8]);
        a.advance(1, &p);
        assert_eq!(a.foot(), [1.0, 0.0]);
        let mut b = state([0.0, 0.0, 1.0, 0.0, 0.5, 1.8]);
        let before = b.covariance.trace();
        b.advance(3, &p);
        assert_eq!(b.foot(), [3.0, 0.0]);
        assert!(b.covariance.trace() > before);
        assert_eq!(b.frame, 4);
    }

    #[test]
    fn zero_noise_correction_snaps_to_measurement() {
        let p = KalmanParams { r_pos: 1e-14, r_size: 1e-14, ..Default::default() };
        let mut s = state([0.0, 0.0, 0.2, 0.1, 0.4, 1.6]);
        s.correct(&Measurement::new(1.5, -2.0, 0.55, 1.75), &p);
        assert!((s.x[0] - 1.5).abs() < 1e-9);
        assert!((s.x[1] + 2.0).abs() < 1e-9);
        assert!((s.x[4] - 0.55).abs() < 1e-9);
        assert!((s.x[5] - 1.75).abs() < 1e-9);
    }

    #[test]
    fn correction_keeps_covariance_symmetric() {
        let p = KalmanParams::default();
        let mut s = state([0.0, 0.0, 0.2, 0.1, 0.4, 1.6]);
        for k in 0..50 {
            s.advance(1, &p);
            s.correct(&Measurement::new(0.2 * k as f64, 0.1 * k as f64, 0.5, 1.7), &p);
            assert!((s.covariance - s.covariance.transpose()).abs().max() < 1e-9);
            assert!(s.covariance.diagonal().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn noiseless_constant_velocity_converges() {
        let p = KalmanParams::default();
        let truth = |k: f64| (1.0 + 0.05 * k, -2.0 + 0.03 * k);
        let mut s = TrackState3D::init(&geom([1.0, -2.0], 0.0), 0, &p);
        for k in 1..=20 {
            s.advance(1, &p);
            let (x, y) = truth(k as f64);
            s.correct(&Measurement::new(x, y, 0.5, 1.8), &p);
        }
        let (x, y) = truth(20.0);
        // Converged filter tracks the truth well; the residual bound below is
        // the exact-measurement regime with near-zero R.
        assert!(((s.x[0] - x).powi(2) + (s.x[1] - y).powi(2)).sqrt() < 0.05);

        let tight = KalmanParams { r_pos: 1e-16, r_size: 1e-16, ..p };
        let mut s = TrackState3D::init(&geom([1.0, -2.0], 0.0), 0, &tight);
        for k in 1..=20 {
            s.advance(1, &tight);
            let (x, y) = truth(k as f64);
            s.correct(&Measurement::new(x, y, 0.5, 1.8), &tight);
        }
        assert!(((s.x[0] - x).powi(2) + (s.x[1] - y).powi(2)).sqrt() < 1e-6);
    }

    #[test]
    fn gate_examples() {
        let pred = geom([0.0, 0.0], 0.0);
        assert!(gate(&pred, &geom([1.9, 0.0], 0.0), 2.0, 1.0 / 30.0, 1.0));
        assert!(!gate(&pred, &geom([2.5, 0.0], 0.0), 2.0, 1.0 / 30.0, 1.0));
        assert!(gate(&pred, &geom([2.5, 0.0], 30.0), 2.0, 1.0 / 30.0, 1.0));
    }

    proptest! {
        #[test]
        fn split_prediction_composes(a in 1u32..6, b in 1u32..6, vx in -16i32..16, vy in -16i32..16) {
            // Dyadic velocities keep the mean arithmetic exact.
            let p = KalmanParams::default();
            let mut split = state([0.375, -0.75, vx as f64 / 16.0, vy as f64 / 16.0, 0.5, 1.8]);
            let mut joint = split.clone();
            split.advance(a, &p);
            split.advance(b, &p);
            joint.advance(a + b, &p);
            prop_assert_eq!(split.x, joint.x);
            prop_assert!((split.covariance - joint.covariance).abs().max() < 1e-9);
        }

        #[test]
        fn gate_is_monotone(d in 0.0f64..10.0, shrink in 0.0f64..1.0, depth in 0.0f64..50.0, extra in 0.0f64..50.0) {
            let pred = geom([0.0, 0.0], 0.0);
            if gate(&pred, &geom([d, 0.0], depth), 2.0, 1.0 / 30.0, 1.0) {
                prop_assert!(gate(&pred, &geom([d * shrink, 0.0], depth), 2.0, 1.0 / 30.0, 1.0));
                prop_assert!(gate(&pred, &geom([d, 0.0], depth + extra), 2.0, 1.0 / 30.0, 1.0));
            }
        }
    }
}
