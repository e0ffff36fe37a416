//! Result overlays: identity-colored boxes, labels, foot trails and averaged
//! appearance-model panels.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};

use crate::appearance::ModelDump;
use crate::bbox::BBox;
use crate::ingest::GroundTruthRecord;

/// Frames of foot history drawn behind each box.
pub const DEFAULT_TRAIL: u32 = 30;

/// Deterministic bright color for an identity.
pub fn id_color(id: u64) -> [u8; 3] {
    // splitmix64 finalizer
    let mut z = id.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    let b = z.to_le_bytes();
    [64 + b[0] % 192, 64 + b[1] % 192, 64 + b[2] % 192]
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

/// Integer pixel extent `(left, top, right, bottom)`, inclusive, of a box.
pub fn pixel_rect(bbox: &BBox) -> (i64, i64, i64, i64) {
    let l = bbox.left().round() as i64;
    let t = bbox.top().round() as i64;
    let r = bbox.right().round() as i64 - 1;
    let b = bbox.bottom().round() as i64 - 1;
    (l, t, r.max(l), b.max(t))
}

/// One-pixel rectangle outline along the box's pixel extent.
pub fn draw_box(img: &mut RgbImage, bbox: &BBox, color: [u8; 3]) {
    let (l, t, r, b) = pixel_rect(bbox);
    for x in l..=r {
        put(img, x, t, color);
        put(img, x, b, color);
    }
    for y in t..=b {
        put(img, l, y, color);
        put(img, r, y, color);
    }
}

/// Straight line between two points, inclusive.
pub fn draw_line(img: &mut RgbImage, a: [f64; 2], b: [f64; 2], color: [u8; 3]) {
    let steps = (b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil().clamp(1.0, 1e5) as i64;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(img, (a[0] + (b[0] - a[0]) * t).round() as i64, (a[1] + (b[1] - a[1]) * t).round() as i64, color);
    }
}

/// 3x5 glyphs for the digits 0-9, one row per entry, high bit leftmost.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Writes the decimal digits of `n` with the top-left corner at `(x, y)`,
/// each glyph pixel a `scale` x `scale` block.
pub fn draw_number(img: &mut RgbImage, n: u64, x: i64, y: i64, scale: i64, color: [u8; 3]) {
    for (i, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x + i as i64 * 4 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        put(img, gx + col * scale + dx, y + row as i64 * scale + dy, color);
                    }
                }
            }
        }
    }
}

/// Result records indexed by identity, each sorted by frame.
pub struct Overlay {
    tracks: BTreeMap<u64, Vec<GroundTruthRecord>>,
    pub trail: u32,
}

impl Overlay {
    pub fn new(records: &[GroundTruthRecord]) -> Self {
        let mut tracks: BTreeMap<u64, Vec<GroundTruthRecord>> = BTreeMap::new();
        for r in records {
            tracks.entry(r.identity).or_default().push(*r);
        }
        for v in tracks.values_mut() {
            v.sort_by_key(|r| r.frame);
        }
        Self { tracks, trail: DEFAULT_TRAIL }
    }

    /// Draws every identity present at `frame`: foot trail over the last
    /// `trail` frames, box and identity label.
    pub fn draw(&self, img: &mut RgbImage, frame: u32) {
        for (&id, recs) in &self.tracks {
            let end = recs.partition_point(|r| r.frame <= frame);
            let Some(current) = end.checked_sub(1).map(|i| &recs[i]).filter(|r| r.frame == frame) else {
                continue;
            };
            let color = id_color(id);
            let start = recs[..end].partition_point(|r| r.frame + self.trail <= frame);
            for pair in recs[start..end].windows(2) {
                draw_line(img, pair[0].bbox.bottom_center(), pair[1].bbox.bottom_center(), color);
            }
            draw_box(img, &current.bbox, color);
            let (l, t, _, _) = pixel_rect(&current.bbox);
            draw_number(img, id, l, t - 12, 2, color);
        }
    }
}

/// Averaged model as an image: each cell becomes a `scale` x `scale` block
/// of its mean color (or mean of channel 0 as gray when the model carries no
/// color); empty cells are black.
pub fn model_panel(dump: &ModelDump, scale: u32) -> RgbImage {
    let scale = scale.max(1);
    let mut img = RgbImage::new(dump.width as u32 * scale, dump.height as u32 * scale);
    for (u, mean) in dump.mean().into_iter().enumerate() {
        let Some(m) = mean else { continue };
        let px = if dump.color {
            [m[0], m[1], m[2]].map(|v| v.round().clamp(0.0, 255.0) as u8)
        } else {
            [m[0].round().clamp(0.0, 255.0) as u8; 3]
        };
        let (cx, cy) = ((u % dump.width) as u32, (u / dump.width) as u32);
        for dy in 0..scale {
            for dx in 0..scale {
                img.put_pixel(cx * scale + dx, cy * scale + dy, Rgb(px));
            }
        }
    }
    img
}

/// Panels side by side, each labeled with its identity underneath.
pub fn model_sheet(models: &[(u64, ModelDump)], scale: u32) -> RgbImage {
    let panels: Vec<(u64, RgbImage)> = models.iter().map(|(id, d)| (*id, model_panel(d, scale))).collect();
    let gap = 4;
    let label = 14;
    let width = panels.iter().map(|(_, p)| p.width() + gap).sum::<u32>() + gap;
    let height = panels.iter().map(|(_, p)| p.height()).max().unwrap_or(0) + label + 2 * gap;
    let mut sheet = RgbImage::from_pixel(width.max(1), height.max(1), Rgb([32, 32, 32]));
    let mut x = gap;
    for (id, p) in &panels {
        image::imageops::replace(&mut sheet, p, x as i64, gap as i64);
        draw_number(&mut sheet, *id, x as i64, (gap + p.height() + 3) as i64, 2, id_color(*id));
        x += p.width() + gap;
    }
    sheet
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::{AppearanceModel, GroupThresholds, Rng};
    use crate::features::{FeatureGrid, FeatureSet, VisibilityMask};

    const BG: [u8; 3] = [10, 20, 30];

    fn canvas() -> RgbImage {
        RgbImage::from_pixel(80, 60, Rgb(BG))
    }

    fn rec(frame: u32, id: u64, bbox: BBox) -> GroundTruthRecord {
        GroundTruthRecord { frame, identity: id, bbox, world: None }
    }

    #[test]
    fn box_outline_at_exact_pixels() {
        let mut img = canvas();
        draw_box(&mut img, &BBox::from_ltwh(10.0, 20.0, 15.0, 25.0), [255, 0, 0]);
        let red = Rgb([255, 0, 0]);
        for (x, y) in [(10, 20), (24, 20), (10, 44), (24, 44), (17, 20), (10, 30)] {
            assert_eq!(*img.get_pixel(x, y), red, "({x}, {y})");
        }
        for (x, y) in [(9, 20), (25, 20), (10, 19), (10, 45), (17, 30)] {
            assert_eq!(*img.get_pixel(x, y), Rgb(BG), "({x}, {y})");
        }
        let changed = img.pixels().filter(|p| **p == red).count();
        assert_eq!(changed, 2 * 15 + 2 * 25 - 4);
    }

    #[test]
    fn clipped_box_does_not_panic() {
        let mut img = canvas();
        draw_box(&mut img, &BBox::from_ltwh(-20.0, 50.0, 200.0, 40.0), [1, 2, 3]);
        assert_eq!(*img.get_pixel(0, 50), Rgb([1, 2, 3]));
    }

    #[test]
    fn identity_colors_are_stable_and_bright() {
        assert_eq!(id_color(7), id_color(7));
        let distinct: std::collections::HashSet<[u8; 3]> = (1..=50).map(id_color).collect();
        assert_eq!(distinct.len(), 50);
        for id in 0..1000 {
            assert!(id_color(id).iter().all(|&c| c >= 64));
        }
    }

    #[test]
    fn digits_render_expected_pattern() {
        let mut img = canvas();
        draw_number(&mut img, 17, 0, 0, 1, [9, 9, 9]);
        let on = |x, y| *img.get_pixel(x, y) == Rgb([9, 9, 9]);
        // "1": column 1 is solid, top-left of its base row lit.
        assert!((0..5).all(|y| on(1, y)));
        assert!(on(0, 1) && !on(2, 1) && on(0, 4) && on(2, 4));
        // "7" starts four pixels to the right.
        assert!(on(4, 0) && on(5, 0) && on(6, 0) && on(6, 1) && !on(4, 1));
        assert!(!on(3, 0));
    }

    #[test]
    fn overlay_draws_only_current_identities() {
        let b = BBox::from_ltwh(30.0, 20.0, 10.0, 20.0);
        let overlay = Overlay::new(&[rec(1, 3, b), rec(2, 3, b), rec(1, 4, BBox::from_ltwh(5.0, 5.0, 4.0, 4.0))]);
        let mut img = canvas();
        overlay.draw(&mut img, 2);
        assert_eq!(*img.get_pixel(30, 20), Rgb(id_color(3)));
        assert_eq!(*img.get_pixel(5, 5), Rgb(BG));
        let mut untouched = canvas();
        Overlay::new(&[]).draw(&mut untouched, 1);
        assert_eq!(untouched, canvas());
    }

    #[test]
    fn trail_joins_recent_feet() {
        let overlay = Overlay::new(&[
            rec(1, 1, BBox::from_ltwh(10.0, 10.0, 4.0, 40.0)),
            rec(2, 1, BBox::from_ltwh(40.0, 10.0, 4.0, 40.0)),
        ]);
        let mut img = canvas();
        overlay.draw(&mut img, 2);
        assert_eq!(*img.get_pixel(25, 50), Rgb(id_color(1)));
    }

    #[test]
    fn panel_shows_mean_color() {
        let set = FeatureSet { rgb: true, lbp: true, gradient: false };
        let mut m = AppearanceModel::new(2, 1, set, GroupThresholds::default(), 4);
        let grid = FeatureGrid { width: 2, height: 1, channels: 4, values: vec![200, 100, 0, 5, 0, 0, 0, 0] };
        let mut mask = VisibilityMask::full(2, 1);
        mask.bits[1] = false;
        m.update(&grid, &mask, &mut Rng::new(1), false).unwrap();
        let panel = model_panel(&m.dump(), 3);
        assert_eq!(panel.dimensions(), (6, 3));
        assert_eq!(*panel.get_pixel(2, 2), Rgb([200, 100, 0]));
        assert_eq!(*panel.get_pixel(3, 0), Rgb([0, 0, 0]));
        let sheet = model_sheet(&[(1, m.dump()), (2, m.dump())], 3);
        assert_eq!(sheet.width(), 4 + 2 * (6 + 4));
    }
}
