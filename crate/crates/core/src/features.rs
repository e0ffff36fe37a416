//! Normalized pixel-template features: RGB, LBP texture and Sobel gradient
//! channels on a fixed `w x h` grid, plus the visibility masks that select
//! which cells take part in model updates and matching.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("image {0}x{1} is smaller than 3x3")]
    TooSmall(usize, usize),
    #[error("box does not intersect the image")]
    EmptyIntersection,
    #[error("feature selection is empty")]
    NoChannels,
}

/// A single-channel 8-bit plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Replicate-padded access.
    #[inline]
    fn clamped(&self, x: isize, y: isize) -> i32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x] as i32
    }
}

#[inline]
pub fn luma(rgb: [u8; 3]) -> u8 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

// Clockwise from top-left; the first neighbor is the most significant bit.
const LBP_OFFSETS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

/// Radius-1, 8-neighbor local binary pattern with replicate padding.
pub fn compute_lbp(gray: &Plane) -> Result<Plane, FeatureError> {
    if gray.width < 3 || gray.height < 3 {
        return Err(FeatureError::TooSmall(gray.width, gray.height));
    }
    let mut out = Vec::with_capacity(gray.data.len());
    for y in 0..gray.height as isize {
        for x in 0..gray.width as isize {
            let center = gray.clamped(x, y);
            let mut code = 0u8;
            for (dx, dy) in LBP_OFFSETS {
                code <<= 1;
                if gray.clamped(x + dx, y + dy) >= center {
                    code |= 1;
                }
            }
            out.push(code);
        }
    }
    Ok(Plane::new(gray.width, gray.height, out))
}

/// Gradient magnitude and angle planes from a 3x3 Sobel operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub magnitude: Plane,
    pub angle: Plane,
}

pub fn angle_code(gx: f64, gy: f64) -> u8 {
    let mut a = gy.atan2(gx);
    if a < 0.0 {
        a += std::f64::consts::TAU;
    }
    (a / std::f64::consts::TAU * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn compute_gradient(gray: &Plane) -> Result<Gradient, FeatureError> {
    if gray.width < 3 || gray.height < 3 {
        return Err(FeatureError::TooSmall(gray.width, gray.height));
    }
    let n = gray.data.len();
    let mut magnitude = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    for y in 0..gray.height as isize {
        for x in 0..gray.width as isize {
            let p = |dx: isize, dy: isize| gray.clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            let (gx, gy) = (gx as f64, gy as f64);
            magnitude.push((gx * gx + gy * gy).sqrt().round().min(255.0) as u8);
            angle.push(angle_code(gx, gy));
        }
    }
    Ok(Gradient {
        magnitude: Plane::new(gray.width, gray.height, magnitude),
        angle: Plane::new(gray.width, gray.height, angle),
    })
}

/// Which channel groups a grid carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub rgb: bool,
    pub lbp: bool,
    pub gradient: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self { rgb: true, lbp: true, gradient: false }
    }
}

/// A named subset of contiguous channels sharing one distance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelGroup {
    Color,
    Texture,
    Edge,
}

impl FeatureSet {
    pub fn channels(&self) -> usize {
        3 * self.rgb as usize + self.lbp as usize + 2 * self.gradient as usize
    }

    pub fn is_empty(&self) -> bool {
        self.channels() == 0
    }

    /// Channel layout: `(group, first channel, channel count)` in storage order.
    pub fn layout(&self) -> Vec<(ChannelGroup, usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        if self.rgb {
            out.push((ChannelGroup::Color, at, 3));
            at += 3;
        }
        if self.lbp {
            out.push((ChannelGroup::Texture, at, 1));
            at += 1;
        }
        if self.gradient {
            out.push((ChannelGroup::Edge, at, 2));
        }
        out
    }

    /// Parses selectors like `rgb+lbp`, `rgb`, `lbp+grad`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut set = FeatureSet { rgb: false, lbp: false, gradient: false };
        for part in s.split('+').map(str::trim) {
            match part.to_ascii_lowercase().as_str() {
                "rgb" => set.rgb = true,
                "lbp" => set.lbp = true,
                "grad" | "gradient" => set.gradient = true,
                _ => return None,
            }
        }
        (!set.is_empty()).then_some(set)
    }

    pub fn selector(&self) -> String {
        let mut parts = Vec::new();
        if self.rgb {
            parts.push("rgb");
        }
        if self.lbp {
            parts.push("lbp");
        }
        if self.gradient {
            parts.push("grad");
        }
        parts.join("+")
    }
}

/// Per-cell feature vectors on a `width x height` grid, cell-major: the
/// `channels` values of cell `(x, y)` start at `(y * width + x) * channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub values: Vec<u8>,
}

impl FeatureGrid {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn cell(&self, u: usize) -> &[u8] {
        &self.values[u * self.channels..(u + 1) * self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl VisibilityMask {
    pub fn full(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![true; width * height] }
    }

    pub fn visible_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Bilinear sample with half-pixel centers and edge clamping.
fn sample_bilinear(image: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let px = |xi: i64, yi: i64| image.get_pixel(xi.clamp(0, w - 1) as u32, yi.clamp(0, h - 1) as u32).0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let (a, b, c, d) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
        let bottom = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Resamples the box region to `width x height` RGB cells.
pub fn resample_patch(image: &RgbImage, bbox: &BBox, width: usize, height: usize) -> Result<Vec<[u8; 3]>, FeatureError> {
    let frame = BBox::from_ltwh(0.0, 0.0, image.width() as f64, image.height() as f64);
    if !bbox.is_valid() || bbox.intersection(&frame).is_none() {
        return Err(FeatureError::EmptyIntersection);
    }
    let sx = bbox.width / width as f64;
    let sy = bbox.height / height as f64;
    let mut out = Vec::with_capacity(width * height);
    for j in 0..height {
        let y = bbox.top() + (j as f64 + 0.5) * sy - 0.5;
        for i in 0..width {
            let x = bbox.left() + (i as f64 + 0.5) * sx - 0.5;
            let v = sample_bilinear(image, x, y);
            out.push(v.map(|c| c.round().clamp(0.0, 255.0) as u8));
        }
    }
    Ok(out)
}

/// Extracts the normalized feature grid of one detection.
pub fn extract_feature_grid(
    image: &RgbImage,
    bbox: &BBox,
    width: usize,
    height: usize,
    features: FeatureSet,
) -> Result<FeatureGrid, FeatureError> {
    if features.is_empty() {
        return Err(FeatureError::NoChannels);
    }
    let patch = resample_patch(image, bbox, width, height)?;
    let needs_gray = features.lbp || features.gradient;
    let gray = needs_gray.then(|| Plane::new(width, height, patch.iter().map(|&p| luma(p)).collect()));
    let lbp = if features.lbp { Some(compute_lbp(gray.as_ref().unwrap())?) } else { None };
    let grad = if features.gradient { Some(compute_gradient(gray.as_ref().unwrap())?) } else { None };

    let channels = features.channels();
    let mut values = Vec::with_capacity(width * height * channels);
    for (u, rgb) in patch.iter().enumerate() {
        if features.rgb {
            values.extend_from_slice(rgb);
        }
        if let Some(l) = &lbp {
            values.push(l.data[u]);
        }
        if let Some(g) = &grad {
            values.push(g.magnitude.data[u]);
            values.push(g.angle.data[u]);
        }
    }
    Ok(FeatureGrid { width, height, channels, values })
}

/// The inscribed ellipse of the `w x h` template.
pub fn maximum_ellipse_mask(width: usize, height: usize) -> VisibilityMask {
    let (hw, hh) = (width as f64 / 2.0, height as f64 / 2.0);
    let mut bits = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 + 0.5 - hw) / hw;
            let dy = (y as f64 + 0.5 - hh) / hh;
            bits.push(dx * dx + dy * dy <= 1.0);
        }
    }
    VisibilityMask { width, height, bits }
}

/// Clears cells whose source pixel falls inside a nearer occluder.
pub fn occlusion_clipped_mask(
    base: &VisibilityMask,
    bbox: &BBox,
    occluders: &[BBox],
    occluder_depths: &[f64],
    self_depth: f64,
) -> VisibilityMask {
    let nearer: Vec<&BBox> = occluders
        .iter()
        .zip(occluder_depths)
        .filter(|(_, &d)| d < self_depth)
        .map(|(b, _)| b)
        .filter(|b| b.intersection(bbox).is_some())
        .collect();
    if nearer.is_empty() {
        return base.clone();
    }
    let sx = bbox.width / base.width as f64;
    let sy = bbox.height / base.height as f64;
    let mut out = base.clone();
    for y in 0..base.height {
        let py = bbox.top() + (y as f64 + 0.5) * sy;
        for x in 0..base.width {
            let idx = y * base.width + x;
            if !out.bits[idx] {
                continue;
            }
            let px = bbox.left() + (x as f64 + 0.5) * sx;
            if nearer.iter().any(|o| o.contains(px, py)) {
                out.bits[idx] = false;
            }
        }
    }
    out
}
