//! Axis-aligned image boxes.

use serde::{Deserialize, Serialize};

/// A 2D box in pixels, stored as center and size.
///
/// Files on disk use the left-top-width-height convention; conversion happens
/// only at the I/O boundary through [`BBox::from_ltwh`] and [`BBox::ltwh`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        Self { cx, cy, width, height }
    }

    pub fn from_ltwh(left: f64, top: f64, width: f64, height: f64) -> Self {
        Self {
            cx: left + width / 2.0,
            cy: top + height / 2.0,
            width,
            height,
        }
    }

    pub fn from_corners(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self::from_ltwh(left, top, right - left, bottom - top)
    }

    pub fn left(&self) -> f64 {
        self.cx - self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.height / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.width / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.height / 2.0
    }

    pub fn ltwh(&self) -> [f64; 4] {
        [self.left(), self.top(), self.width, self.height]
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.height > 0.0 && self.cx.is_finite() && self.cy.is_finite()
    }

    pub fn bottom_center(&self) -> [f64; 2] {
        [self.cx, self.bottom()]
    }

    pub fn top_center(&self) -> [f64; 2] {
        [self.cx, self.top()]
    }

    /// Intersection with another box, `None` when the overlap has zero area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let left = self.left().max(other.left());
        let top = self.top().max(other.top());
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        if right > left && bottom > top {
            Some(BBox::from_corners(left, top, right, bottom))
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Half-open containment test: left/top edges inclusive, right/bottom exclusive.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.left() && x < self.right() && y >= self.top() && y < self.bottom()
    }

    /// Linear interpolation between two boxes, `t` in `[0, 1]`.
    pub fn lerp(&self, other: &BBox, t: f64) -> BBox {
        let mix = |a: f64, b: f64| a + (b - a) * t;
        BBox {
            cx: mix(self.cx, other.cx),
            cy: mix(self.cy, other.cy),
            width: mix(self.width, other.width),
            height: mix(self.height, other.height),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ltwh_round_trip() {
        let b = BBox::from_ltwh(10.0, 20.0, 30.0, 60.0);
        assert_eq!(b.cx, 25.0);
        assert_eq!(b.cy, 50.0);
        assert_eq!(b.ltwh(), [10.0, 20.0, 30.0, 60.0]);
    }

    #[test]
    fn iou_of_half_shifted_boxes() {
        let a = BBox::from_ltwh(0.0, 0.0, 2.0, 2.0);
        let b = BBox::from_ltwh(1.0, 0.0, 2.0, 2.0);
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(a.iou(&BBox::from_ltwh(5.0, 5.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn touching_boxes_do_not_intersect() {
        let a = BBox::from_ltwh(0.0, 0.0, 1.0, 1.0);
        let b = BBox::from_ltwh(1.0, 0.0, 1.0, 1.0);
        assert!(a.intersection(&b).is_none());
    }
}
