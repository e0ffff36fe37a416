//! MOTChallenge-style detection, ground-truth and result files, plus frame
//! images.
//!
//! All CSV rows follow `frame,id,left,top,width,height,conf,x,y,z`. Boxes are
//! converted to center+size on the way in and back on the way out.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::bbox::BBox;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{0}: no valid rows")]
    EmptyInput(String),
    #[error("cannot decode image {path}: {message}")]
    Decode { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("duplicate (frame {frame}, id {id}) in track output")]
    DuplicateIdentity { frame: u32, id: u64 },
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRecord {
    pub frame: u32,
    pub identity: u64,
    pub bbox: BBox,
    pub world: Option<[f64; 2]>,
}

/// Detections grouped by frame: index `k` holds frame `k + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameDetections {
    frames: Vec<Vec<DetectionRecord>>,
}

impl FrameDetections {
    pub fn from_records(records: impl IntoIterator<Item = DetectionRecord>) -> Self {
        let mut frames: Vec<Vec<DetectionRecord>> = Vec::new();
        for rec in records {
            let idx = (rec.frame - 1) as usize;
            if frames.len() <= idx {
                frames.resize_with(idx + 1, Vec::new);
            }
            frames[idx].push(rec);
        }
        Self { frames }
    }

    /// Detections of a 1-based frame; empty for frames past the end.
    pub fn frame(&self, frame: u32) -> &[DetectionRecord] {
        frame
            .checked_sub(1)
            .and_then(|i| self.frames.get(i as usize))
            .map_or(&[], Vec::as_slice)
    }

    /// Extends with empty frames up to `frames`.
    pub fn pad_to(&mut self, frames: u32) {
        if self.frames.len() < frames as usize {
            self.frames.resize_with(frames as usize, Vec::new);
        }
    }

    pub fn num_frames(&self) -> u32 {
        self.frames.len() as u32
    }

    pub fn total(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[DetectionRecord])> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u32 + 1, v.as_slice()))
    }
}

struct Row {
    frame: u32,
    id: i64,
    bbox: BBox,
    confidence: f64,
    world: Option<[f64; 2]>,
}

fn parse_rows(path: &Path, text: &str) -> Result<Vec<Row>, IngestError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| IngestError::Parse {
            path: path.display().to_string(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 {
            return Err(err(format!("expected at least 6 columns, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64, IngestError> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| err(format!("column {}: not a number: {:?}", k + 1, fields[k])))
        };
        let frame = num(0)?;
        if frame < 1.0 || frame.fract() != 0.0 {
            return Err(err(format!("invalid frame index {frame}")));
        }
        let id = num(1)?;
        let (left, top, width, height) = (num(2)?, num(3)?, num(4)?, num(5)?);
        let confidence = if fields.len() > 6 { num(6)? } else { 1.0 };
        let world = if fields.len() > 8 {
            let (x, y) = (num(7)?, num(8)?);
            (!(x == -1.0 && y == -1.0)).then_some([x, y])
        } else {
            None
        };
        rows.push(Row {
            frame: frame as u32,
            id: id as i64,
            bbox: BBox::from_ltwh(left, top, width, height),
            confidence,
            world,
        });
    }
    Ok(rows)
}

fn read_text(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| IngestError::io(path, e))
}

/// Loads a detection file, dropping low-confidence and degenerate boxes.
pub fn load_detections(path: impl AsRef<Path>, min_confidence: f64) -> Result<FrameDetections, IngestError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_detections(path, &text, min_confidence)
}

pub fn parse_detections(path: &Path, text: &str, min_confidence: f64) -> Result<FrameDetections, IngestError> {
    let rows = parse_rows(path, text)?;
    if rows.is_empty() {
        return Err(IngestError::EmptyInput(path.display().to_string()));
    }
    let max_frame = rows.iter().map(|r| r.frame).max().unwrap_or(0);
    let mut dets = FrameDetections::from_records(rows.into_iter().filter_map(|r| {
        (r.confidence >= min_confidence && r.bbox.width > 0.0 && r.bbox.height > 0.0).then_some(DetectionRecord {
            frame: r.frame,
            bbox: r.bbox,
            confidence: r.confidence,
        })
    }));
    if dets.frames.len() < max_frame as usize {
        dets.frames.resize_with(max_frame as usize, Vec::new);
    }
    Ok(dets)
}

/// Loads ground truth or tracker results (the same row layout). World
/// coordinates of `-1,-1` are read as unknown.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>, IngestError> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_ground_truth(path, &text)
}

pub fn parse_ground_truth(path: &Path, text: &str) -> Result<Vec<GroundTruthRecord>, IngestError> {
    parse_rows(path, text)?
        .into_iter()
        .map(|r| {
            if r.id < 1 {
                return Err(IngestError::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    message: format!("frame {}: identity {} must be positive", r.frame, r.id),
                });
            }
            Ok(GroundTruthRecord {
                frame: r.frame,
                identity: r.id as u64,
                bbox: r.bbox,
                world: r.world,
            })
        })
        .collect()
}

/// Loads a raster image as 8-bit RGB; grayscale inputs get three equal channels.
pub fn load_frame(path: impl AsRef<Path>) -> Result<RgbImage, IngestError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| IngestError::Decode {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(IngestError::Decode {
            path: path.display().to_string(),
            message: "empty image".into(),
        });
    }
    Ok(rgb)
}

const FRAME_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "JPG"];

/// Locates frame images named `%06d.<ext>` under a sequence directory or its
/// `img1/` subdirectory.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    dir: PathBuf,
}

impl FrameSequence {
    pub fn open(seq_dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let seq_dir = seq_dir.as_ref();
        for dir in [seq_dir.join("img1"), seq_dir.to_path_buf()] {
            let seq = Self { dir };
            if seq.path(1).is_some() {
                return Ok(seq);
            }
        }
        Err(IngestError::Io {
            path: seq_dir.display().to_string(),
            source: io::Error::new(io::ErrorKind::NotFound, "no frame 000001 found"),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, frame: u32) -> Option<PathBuf> {
        FRAME_EXTENSIONS
            .iter()
            .map(|ext| self.dir.join(format!("{frame:06}.{ext}")))
            .find(|p| p.is_file())
    }

    /// Number of consecutive frames starting at 1.
    pub fn len(&self) -> u32 {
        let mut n = 0;
        while self.path(n + 1).is_some() {
            n += 1;
        }
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load(&self, frame: u32) -> Result<RgbImage, IngestError> {
        let path = self
            .path(frame)
            .unwrap_or_else(|| self.dir.join(format!("{frame:06}.jpg")));
        load_frame(path)
    }
}

/// One reported position of a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackEntry {
    pub frame: u32,
    pub bbox: BBox,
    pub foot: Option<[f64; 2]>,
    /// Filled in by interpolation rather than observed.
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub identity: u64,
    pub entries: Vec<TrackEntry>,
}

/// Tracker output in the ground-truth record form used by evaluation.
pub fn track_records(tracks: &[TrackOutput]) -> Vec<GroundTruthRecord> {
    let mut out: Vec<GroundTruthRecord> = tracks
        .iter()
        .flat_map(|t| {
            t.entries.iter().map(move |e| GroundTruthRecord { frame: e.frame, identity: t.identity, bbox: e.bbox, world: e.foot })
        })
        .collect();
    out.sort_by_key(|r| (r.frame, r.identity));
    out
}

/// Renders tracks as MOTChallenge result rows sorted by `(frame, id)`.
pub fn format_tracks(tracks: &[TrackOutput]) -> Result<String, IngestError> {
    let mut rows: Vec<(u32, u64, &TrackEntry)> = tracks
        .iter()
        .flat_map(|t| t.entries.iter().map(move |e| (e.frame, t.identity, e)))
        .collect();
    rows.sort_by_key(|&(frame, id, _)| (frame, id));
    if let Some(w) = rows.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(IngestError::DuplicateIdentity { frame: w[0].0, id: w[0].1 });
    }
    let mut out = String::new();
    for (frame, id, e) in rows {
        let [l, t, w, h] = e.bbox.ltwh();
        let _ = write!(out, "{frame},{id},{l:.6},{t:.6},{w:.6},{h:.6},1,");
        let _ = match e.foot {
            Some([x, y]) => writeln!(out, "{x:.6},{y:.6},0"),
            None => writeln!(out, "-1,-1,0"),
        };
    }
    Ok(out)
}

pub fn write_tracks(path: impl AsRef<Path>, tracks: &[TrackOutput]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let text = format_tracks(tracks)?;
    fs::write(path, text).map_err(|e| IngestError::io(path, e))
}

/// Writes detections in the same row layout (`id = -1`).
pub fn format_detections(dets: &FrameDetections) -> String {
    let mut out = String::new();
    for (_, frame) in dets.iter() {
        for d in frame {
            let [l, t, w, h] = d.bbox.ltwh();
            let _ = writeln!(
                out,
                "{},-1,{l:.6},{t:.6},{w:.6},{h:.6},{:.6},-1,-1,-1",
                d.frame, d.confidence
            );
        }
    }
    out
}

pub fn format_ground_truth(records: &[GroundTruthRecord]) -> String {
    let mut sorted: Vec<&GroundTruthRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.identity));
    let mut out = String::new();
    for r in sorted {
        let [l, t, w, h] = r.bbox.ltwh();
        let _ = write!(out, "{},{},{l:.6},{t:.6},{w:.6},{h:.6},1,", r.frame, r.identity);
        let _ = match r.world {
            Some([x, y]) => writeln!(out, "{x:.6},{y:.6},0"),
            None => writeln!(out, "-1,-1,0"),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem.txt")
    }

    #[test]
    fn single_row_parses() {
        let d = parse_detections(p(), "1,-1,10,20,30,60,0.9,-1,-1,-1\n", 0.0).unwrap();
        assert_eq!(d.frame(1).len(), 1);
        assert_eq!(d.frame(1)[0].bbox.ltwh(), [10.0, 20.0, 30.0, 60.0]);
        assert_eq!(d.frame(1)[0].confidence, 0.9);
    }

    #[test]
    fn confidence_threshold_drops_rows() {
        let d = parse_detections(p(), "1,-1,10,20,30,60,0.9,-1,-1,-1\n", 0.95).unwrap();
        assert!(d.frame(1).is_empty());
        assert_eq!(d.num_frames(), 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        match parse_detections(p(), "1,a,b\n", 0.0) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_detections(p(), "1,-1,1,1,1,1,1\n2,-1,x,1,1,1,1\n", 0.0) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse_detections(p(), "\n", 0.0), Err(IngestError::EmptyInput(_))));
    }

    #[test]
    fn frames_are_dense() {
        let d = parse_detections(p(), "3,-1,0,0,5,5,1\n1,-1,0,0,5,5,1\n", 0.0).unwrap();
        assert_eq!(d.num_frames(), 3);
        assert_eq!(d.frame(1).len(), 1);
        assert!(d.frame(2).is_empty());
        assert_eq!(d.frame(3).len(), 1);
        assert!(d.frame(7).is_empty());
    }

    #[test]
    fn non_positive_extent_dropped() {
        let d = parse_detections(p(), "1,-1,0,0,0,5,1\n1,-1,0,0,5,5,1\n", 0.0).unwrap();
        assert_eq!(d.frame(1).len(), 1);
    }

    #[test]
    fn track_row_format() {
        let tracks = vec![TrackOutput {
            identity: 1,
            entries: vec![TrackEntry {
                frame: 1,
                bbox: BBox::from_ltwh(10.0, 20.0, 30.0, 60.0),
                foot: Some([1.5, 2.5]),
                synthetic: false,
            }],
        }];
        assert_eq!(
            format_tracks(&tracks).unwrap(),
            "1,1,10.000000,20.000000,30.000000,60.000000,1,1.500000,2.500000,0\n"
        );
        assert_eq!(format_tracks(&[]).unwrap(), "");
    }

    #[test]
    fn track_rows_sorted_by_frame_then_id() {
        let entry = |frame| TrackEntry {
            frame,
            bbox: BBox::from_ltwh(0.0, 0.0, 1.0, 1.0),
            foot: None,
            synthetic: false,
        };
        let tracks = vec![
            TrackOutput { identity: 2, entries: vec![entry(1), entry(2)] },
            TrackOutput { identity: 1, entries: vec![entry(2), entry(3)] },
        ];
        let text = format_tracks(&tracks).unwrap();
        let keys: Vec<(u32, u64)> = text
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                (f[0].parse().unwrap(), f[1].parse().unwrap())
            })
            .collect();
        assert_eq!(keys, vec![(1, 2), (2, 1), (2, 2), (3, 1)]);
        assert!(text.lines().next().unwrap().ends_with(",1,-1,-1,0"));
    }

    #[test]
    fn duplicate_frame_identity_rejected() {
        let e = TrackEntry {
            frame: 1,
            bbox: BBox::from_ltwh(0.0, 0.0, 1.0, 1.0),
            foot: None,
            synthetic: false,
        };
        let tracks = vec![TrackOutput { identity: 1, entries: vec![e, e] }];
        assert!(matches!(format_tracks(&tracks), Err(IngestError::DuplicateIdentity { .. })));
    }

    #[test]
    fn ground_truth_world_coordinates() {
        let gt = parse_ground_truth(p(), "1,3,0,0,10,20,1,2.5,-0.5,0\n2,3,0,0,10,20,1,-1,-1,-1\n").unwrap();
        assert_eq!(gt[0].identity, 3);
        assert_eq!(gt[0].world, Some([2.5, -0.5]));
        assert_eq!(gt[1].world, None);
        assert!(parse_ground_truth(p(), "1,0,0,0,10,20,1\n").is_err());
    }

    #[test]
    fn missing_frame_is_decode_error() {
        assert!(matches!(load_frame("/nonexistent/000001.png"), Err(IngestError::Decode { .. })));
    }

    #[test]
    fn frame_images_load_as_rgb() {
        let dir = tempfile::tempdir().unwrap();
        let red = RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
        let path = dir.path().join("000001.png");
        red.save(&path).unwrap();
        let img = load_frame(&path).unwrap();
        assert_eq!(img.dimensions(), (2, 2));
        assert!(img.pixels().all(|p| p.0 == [255, 0, 0]));

        let gray = image::GrayImage::from_pixel(3, 1, image::Luma([77]));
        let gpath = dir.path().join("000002.png");
        gray.save(&gpath).unwrap();
        let img = load_frame(&gpath).unwrap();
        assert!(img.pixels().all(|p| p.0 == [77, 77, 77]));

        let seq = FrameSequence::open(dir.path()).unwrap();
        assert_eq!(seq.len(), 2);
    }

    proptest! {
        #[test]
        fn detection_rows_survive_write_and_reload(
            boxes in proptest::collection::vec((1u32..20, 0.0f64..600.0, 0.0f64..400.0, 1.0f64..80.0, 1.0f64..200.0), 1..40)
        ) {
            let dets = FrameDetections::from_records(boxes.iter().map(|&(frame, l, t, w, h)| DetectionRecord {
                frame,
                bbox: BBox::from_ltwh(l, t, w, h),
                confidence: 1.0,
            }));
            let once = parse_detections(p(), &format_detections(&dets), 0.0).unwrap();
            let twice = parse_detections(p(), &format_detections(&once), 0.0).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.total(), boxes.len());
        }
    }
}
