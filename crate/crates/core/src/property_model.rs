//! Per-target online Gaussian over `(V_X, V_Y, W, H)` used to drop
//! implausible candidate observations by the three-sigma rule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianPropertyModel {
    pub count: u64,
    pub mean: [f64; 4],
    /// Welford sums of squared deviations.
    pub m2: [f64; 4],
}

impl GaussianPropertyModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, velocity: [f64; 2], width3d: f64, height3d: f64) {
        let x = [velocity[0], velocity[1], width3d, height3d];
        self.count += 1;
        let n = self.count as f64;
        for k in 0..4 {
            let delta = x[k] - self.mean[k];
            self.mean[k] += delta / n;
            self.m2[k] += delta * (x[k] - self.mean[k]);
        }
    }

    /// Sample variance per dimension; `None` below two samples.
    pub fn variance(&self) -> Option<[f64; 4]> {
        (self.count >= 2).then(|| self.m2.map(|m| m / (self.count - 1) as f64))
    }

    pub fn std_dev(&self) -> Option<[f64; 4]> {
        self.variance().map(|v| v.map(f64::sqrt))
    }

    /// Three-sigma acceptance, inclusive at the boundary. Immature models
    /// (fewer than `min_count` samples) accept everything.
    pub fn is_inlier(&self, velocity: [f64; 2], width3d: f64, height3d: f64, min_count: u64, sigma_floor: [f64; 4]) -> bool {
        if self.count < min_count {
            return true;
        }
        let Some(sd) = self.std_dev() else {
            return true;
        };
        let x = [velocity[0], velocity[1], width3d, height3d];
        (0..4).all(|k| (x[k] - self.mean[k]).abs() <= 3.0 * sd[k].max(sigma_floor[k]))
    }
}
