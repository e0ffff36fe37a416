//! Calibrated-camera geometry: ground-plane back-projection, 3D observation
//! geometry and the depth-compensation weight.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;

const EPS_W: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point maps to infinity on the ground plane")]
    PointAtInfinity,
    #[error("height solve is degenerate for this box")]
    DegenerateHeight,
    #[error("box has non-positive extent")]
    InvalidBox,
    #[error("ground homography is singular (|det| = {0:e})")]
    SingularHomography(f64),
    #[error("projection has a singular left 3x3 block")]
    SingularProjection,
    #[error("calibration parse error: {0}")]
    Parse(String),
    #[error("calibration io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A pinhole camera given by its 3x4 projection matrix (pixels from meters),
/// with the ground plane at `Z = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedCamera {
    projection: Matrix3x4<f64>,
    camera_center: Vector3<f64>,
    ground_homography: Matrix3<f64>,
    ground_inverse: Matrix3<f64>,
}

impl CalibratedCamera {
    pub fn new(projection: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        let ground_homography = Matrix3::from_columns(&[
            projection.column(0).into_owned(),
            projection.column(1).into_owned(),
            projection.column(3).into_owned(),
        ]);
        let det = ground_homography.determinant();
        if !(det.abs() > 1e-12) {
            return Err(GeometryError::SingularHomography(det));
        }
        let ground_inverse = ground_homography
            .try_inverse()
            .ok_or(GeometryError::SingularHomography(det))?;
        let left = projection.fixed_view::<3, 3>(0, 0).into_owned();
        let left_inv = left.try_inverse().ok_or(GeometryError::SingularProjection)?;
        let camera_center = -(left_inv * projection.column(3));
        Ok(Self {
            projection,
            camera_center,
            ground_homography,
            ground_inverse,
        })
    }

    /// Builds a camera at `eye` looking at `target` with world `+Z` up, image
    /// `x` to the right and `y` down.
    pub fn look_at(
        focal: f64,
        principal: [f64; 2],
        eye: [f64; 3],
        target: [f64; 3],
    ) -> Result<Self, GeometryError> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::z());
        if right.norm() < 1e-9 {
            return Err(GeometryError::SingularProjection);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let intrinsics = Matrix3::new(focal, 0.0, principal[0], 0.0, focal, principal[1], 0.0, 0.0, 1.0);
        let mut extrinsics = Matrix3x4::zeros();
        extrinsics.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        extrinsics.set_column(3, &translation);
        Self::new(intrinsics * extrinsics)
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.projection
    }

    pub fn camera_center(&self) -> [f64; 3] {
        [self.camera_center.x, self.camera_center.y, self.camera_center.z]
    }

    pub fn ground_homography(&self) -> &Matrix3<f64> {
        &self.ground_homography
    }

    /// Projects a world point to pixels. `None` when it lands at infinity.
    pub fn project(&self, world: [f64; 3]) -> Option<[f64; 2]> {
        let h = self.projection * Vector4::new(world[0], world[1], world[2], 1.0);
        if h.z.abs() < EPS_W {
            return None;
        }
        Some([h.x / h.z, h.y / h.z])
    }

    /// Maps an image pixel to its `(X, Y)` point on the ground plane.
    pub fn back_project_ground(&self, pixel: [f64; 2]) -> Result<[f64; 2], GeometryError> {
        let h = self.ground_inverse * Vector3::new(pixel[0], pixel[1], 1.0);
        if h.z.abs() < EPS_W || !h.z.is_finite() {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok([h.x / h.z, h.y / h.z])
    }

    /// The height `Z` above ground point `(x, y)` whose projection lands on
    /// image row `v`.
    pub fn height_at_row(&self, foot: [f64; 2], v: f64) -> Result<f64, GeometryError> {
        let p = &self.projection;
        let base = Vector4::new(foot[0], foot[1], 0.0, 1.0);
        let row_y = p.row(1) * base;
        let row_w = p.row(2) * base;
        let denom = p[(1, 2)] - v * p[(2, 2)];
        if denom.abs() < EPS_W {
            return Err(GeometryError::DegenerateHeight);
        }
        Ok((v * row_w[0] - row_y[0]) / denom)
    }

    /// Euclidean distance from the camera center to a ground point.
    pub fn ground_depth(&self, foot: [f64; 2]) -> f64 {
        let c = self.camera_center;
        ((c.x - foot[0]).powi(2) + (c.y - foot[1]).powi(2) + c.z.powi(2)).sqrt()
    }

    /// The 3D geometry of a detection box.
    pub fn observation_geometry(&self, bbox: &BBox) -> Result<Geometry3D, GeometryError> {
        if !bbox.is_valid() {
            return Err(GeometryError::InvalidBox);
        }
        let foot = self.back_project_ground(bbox.bottom_center())?;
        let height3d = self.height_at_row(foot, bbox.top())?;
        if !(height3d > 0.0) {
            return Err(GeometryError::DegenerateHeight);
        }
        let left = self.back_project_ground([bbox.left(), bbox.bottom()])?;
        let right = self.back_project_ground([bbox.right(), bbox.bottom()])?;
        let width3d = ((right[0] - left[0]).powi(2) + (right[1] - left[1]).powi(2)).sqrt();
        if !(width3d > 0.0) {
            return Err(GeometryError::InvalidBox);
        }
        Ok(Geometry3D {
            bbox: *bbox,
            foot,
            depth: self.ground_depth(foot),
            velocity: [0.0, 0.0],
            width3d,
            height3d,
        })
    }

    /// Image box of an upright billboard of the given size standing at `foot`.
    pub fn project_box(&self, foot: [f64; 2], width3d: f64, height3d: f64) -> Option<BBox> {
        let bottom = self.project([foot[0], foot[1], 0.0])?;
        let top = self.project([foot[0], foot[1], height3d])?;
        let h = bottom[1] - top[1];
        if !(h > 0.0) {
            return None;
        }
        let w = h * width3d / height3d;
        Some(BBox::from_corners(bottom[0] - w / 2.0, top[1], bottom[0] + w / 2.0, bottom[1]))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        text.parse()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_string())
    }
}

impl FromStr for CalibratedCamera {
    type Err = GeometryError;

    /// Twelve whitespace-separated numbers, row-major 3x4 projection.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let values = s
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| GeometryError::Parse(format!("not a number: {tok:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != 12 {
            return Err(GeometryError::Parse(format!(
                "expected 12 values, found {}",
                values.len()
            )));
        }
        Self::new(Matrix3x4::from_row_slice(&values))
    }
}

impl fmt::Display for CalibratedCamera {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..3 {
            let row: Vec<String> = (0..4).map(|c| format!("{:e}", self.projection[(r, c)])).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// The 3D geometry of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry3D {
    pub bbox: BBox,
    /// Ground-plane foot point, meters.
    pub foot: [f64; 2],
    /// Camera-to-foot distance, meters.
    pub depth: f64,
    /// Ground-plane velocity, meters per frame.
    pub velocity: [f64; 2],
    pub width3d: f64,
    pub height3d: f64,
}

impl Geometry3D {
    pub fn foot_distance(&self, other: &Geometry3D) -> f64 {
        ground_distance(self.foot, other.foot)
    }
}

pub fn ground_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Depth-compensation weight `depth * eta_d + c_d`.
#[inline]
pub fn depth_weight(depth: f64, eta_d: f64, c_d: f64) -> f64 {
    depth * eta_d + c_d
}
