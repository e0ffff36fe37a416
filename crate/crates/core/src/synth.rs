//! Synthetic scenes: a flat ground seen by a pinhole camera, flat-colored
//! billboard agents following keyframed paths, and static occluders.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::association::covered_area;
use crate::bbox::BBox;
use crate::geometry::CalibratedCamera;
use crate::ingest::{format_detections, format_ground_truth, DetectionRecord, FrameDetections, GroundTruthRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
}

/// Detections whose visible fraction falls below this are not reported.
pub const MIN_DETECTABLE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub focal: f64,
    pub principal: [f64; 2],
    pub eye: [f64; 3],
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u64,
    /// Upper and lower body colors.
    pub top: [u8; 3],
    pub bottom: [u8; 3],
    pub width: f64,
    pub height: f64,
    /// `(frame, foot)` keyframes in increasing frame order; the agent exists
    /// from the first to the last keyframe.
    pub path: Vec<(u32, [f64; 2])>,
}

impl Agent {
    pub fn position(&self, frame: u32) -> Option<[f64; 2]> {
        let first = self.path.first()?;
        let last = self.path.last()?;
        if frame < first.0 || frame > last.0 {
            return None;
        }
        for w in self.path.windows(2) {
            let ((f0, p0), (f1, p1)) = (w[0], w[1]);
            if frame >= f0 && frame <= f1 {
                let t = if f1 == f0 { 0.0 } else { (frame - f0) as f64 / (f1 - f0) as f64 };
                return Some([p0[0] + (p1[0] - p0[0]) * t, p0[1] + (p1[1] - p0[1]) * t]);
            }
        }
        Some(first.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occluder {
    pub foot: [f64; 2],
    pub width: f64,
    pub height: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub frames: u32,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub pose: CameraPose,
    pub seed: u64,
    /// Standard deviation of the pixel noise added to each box coordinate.
    pub det_noise: f64,
    /// Probability that a visible agent goes undetected in a frame.
    pub dropout: f64,
    pub background: [u8; 3],
    pub agents: Vec<Agent>,
    pub occluders: Vec<Occluder>,
}

/// Something drawn in a frame, with its camera distance.
struct Drawable {
    bbox: BBox,
    depth: f64,
    colors: ([u8; 3], [u8; 3]),
    agent: Option<u64>,
    foot: [f64; 2],
}

/// Ground-truth view of one agent in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentView {
    pub id: u64,
    pub bbox: BBox,
    pub foot: [f64; 2],
    pub visibility: f64,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',').map(|p| p.trim().parse::<T>().map_err(|_| format!("invalid value `{p}`"))).collect()
}

fn rgb(s: &str) -> Result<[u8; 3], String> {
    match parse_triple::<u8>(s)?.as_slice() {
        [r, g, b] => Ok([*r, *g, *b]),
        _ => Err(format!("expected r,g,b, got `{s}`")),
    }
}

fn xy(s: &str) -> Result<[f64; 2], String> {
    match parse_triple::<f64>(s)?.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(format!("expected x,y, got `{s}`")),
    }
}

fn fmt_rgb(c: [u8; 3]) -> String {
    format!("{},{},{}", c[0], c[1], c[2])
}

/// `key=value` attributes of an `agent` or `occluder` line.
fn attrs(tokens: &[&str]) -> Result<Vec<(String, String)>, String> {
    tokens
        .iter()
        .map(|t| t.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected key=value, got `{t}`")))
        .collect()
}

impl Scenario {
    pub fn camera(&self) -> CalibratedCamera {
        CalibratedCamera::look_at(self.pose.focal, self.pose.principal, self.pose.eye, self.pose.target)
            .expect("scenario camera validated on construction")
    }

    /// Parses the scenario text format. Global settings are `key = value`;
    /// agents and occluders are one line each:
    ///
    /// ```text
    /// agent id=1 top=200,40,40 bottom=120,20,20 size=0.5,1.8 path=1:-2,7;100:2,7
    /// occluder at=0,5 size=2,2.4 color=90,90,90
    /// ```
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut s = Scenario::empty("custom");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| SynthError::Parse { line: i + 1, message };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens[0] {
                "agent" => s.agents.push(Self::parse_agent(&tokens[1..]).map_err(perr)?),
                "occluder" => s.occluders.push(Self::parse_occluder(&tokens[1..]).map_err(perr)?),
                _ => {
                    let (k, v) = line.split_once('=').ok_or_else(|| perr("expected `key = value`".into()))?;
                    s.set(k.trim(), v.trim()).map_err(perr)?;
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("invalid number `{v}`"));
        match key {
            "name" => self.name = v.to_string(),
            "frames" => self.frames = v.parse().map_err(|_| format!("invalid frame count `{v}`"))?,
            "fps" => self.fps = num(v)?,
            "width" => self.width = v.parse().map_err(|_| format!("invalid width `{v}`"))?,
            "height" => self.height = v.parse().map_err(|_| format!("invalid height `{v}`"))?,
            "seed" => self.seed = v.parse().map_err(|_| format!("invalid seed `{v}`"))?,
            "det_noise" => self.det_noise = num(v)?,
            "dropout" => self.dropout = num(v)?,
            "background" => self.background = rgb(v)?,
            "camera" => {
                let n: Vec<f64> = v.split_whitespace().map(num).collect::<Result<_, _>>()?;
                let [f, cx, cy, ex, ey, ez, tx, ty, tz] = n.as_slice() else {
                    return Err("camera takes focal cx cy eye_x eye_y eye_z target_x target_y target_z".into());
                };
                self.pose = CameraPose { focal: *f, principal: [*cx, *cy], eye: [*ex, *ey, *ez], target: [*tx, *ty, *tz] };
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn parse_agent(tokens: &[&str]) -> Result<Agent, String> {
        let mut a = Agent { id: 0, top: [200, 200, 200], bottom: [100, 100, 100], width: 0.5, height: 1.8, path: Vec::new() };
        for (k, v) in attrs(tokens)? {
            match k.as_str() {
                "id" => a.id = v.parse().map_err(|_| format!("invalid id `{v}`"))?,
                "top" => a.top = rgb(&v)?,
                "bottom" => a.bottom = rgb(&v)?,
                "size" => [a.width, a.height] = xy(&v)?,
                "path" => {
                    for kf in v.split(';') {
                        let (f, p) = kf.split_once(':').ok_or_else(|| format!("expected frame:x,y, got `{kf}`"))?;
                        let f = f.trim().parse().map_err(|_| format!("invalid frame `{f}`"))?;
                        a.path.push((f, xy(p)?));
                    }
                }
                _ => return Err(format!("unknown agent attribute `{k}`")),
            }
        }
        Ok(a)
    }

    fn parse_occluder(tokens: &[&str]) -> Result<Occluder, String> {
        let mut o = Occluder { foot: [0.0, 0.0], width: 1.0, height: 2.0, color: [80, 80, 80] };
        for (k, v) in attrs(tokens)? {
            match k.as_str() {
                "at" => o.foot = xy(&v)?,
                "size" => [o.width, o.height] = xy(&v)?,
                "color" => o.color = rgb(&v)?,
                _ => return Err(format!("unknown occluder attribute `{k}`")),
            }
        }
        Ok(o)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return bad("frames, width and height must be positive");
        }
        if !(self.fps > 0.0) || !(self.det_noise >= 0.0) || !(0.0..=1.0).contains(&self.dropout) {
            return bad("fps must be positive, det_noise non-negative and dropout in [0, 1]");
        }
        CalibratedCamera::look_at(self.pose.focal, self.pose.principal, self.pose.eye, self.pose.target)
            .map_err(|e| SynthError::Invalid(format!("camera: {e}")))?;
        let mut ids: Vec<u64> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) || ids.first() == Some(&0) {
            return bad("agent ids must be unique and positive");
        }
        for a in &self.agents {
            if a.path.is_empty() || a.path.windows(2).any(|w| w[1].0 < w[0].0) {
                return bad("agent paths need keyframes in frame order");
            }
            if !(a.width > 0.0 && a.height > 0.0) {
                return bad("agent size must be positive");
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let p = &self.pose;
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "frames = {}\nfps = {}\nwidth = {}\nheight = {}", self.frames, self.fps, self.width, self.height);
        let _ = writeln!(
            s,
            "camera = {} {} {} {} {} {} {} {} {}",
            p.focal, p.principal[0], p.principal[1], p.eye[0], p.eye[1], p.eye[2], p.target[0], p.target[1], p.target[2]
        );
        let _ = writeln!(s, "seed = {}\ndet_noise = {}\ndropout = {}", self.seed, self.det_noise, self.dropout);
        let _ = writeln!(s, "background = {}", fmt_rgb(self.background));
        for a in &self.agents {
            let path: Vec<String> = a.path.iter().map(|(f, p)| format!("{f}:{},{}", p[0], p[1])).collect();
            let _ = writeln!(
                s,
                "agent id={} top={} bottom={} size={},{} path={}",
                a.id,
                fmt_rgb(a.top),
                fmt_rgb(a.bottom),
                a.width,
                a.height,
                path.join(";")
            );
        }
        for o in &self.occluders {
            let _ = writeln!(s, "occluder at={},{} size={},{} color={}", o.foot[0], o.foot[1], o.width, o.height, fmt_rgb(o.color));
        }
        s
    }

    pub fn empty(name: &str) -> Self {
        Scenario {
            name: name.to_string(),
            frames: 100,
            fps: 25.0,
            width: 640,
            height: 480,
            pose: CameraPose { focal: 800.0, principal: [320.0, 240.0], eye: [0.0, -2.0, 5.0], target: [0.0, 8.0, 0.0] },
            seed: 0,
            det_noise: 0.0,
            dropout: 0.0,
            background: [96, 112, 96],
            agents: Vec::new(),
            occluders: Vec::new(),
        }
    }

    /// Two distinctly colored agents walk toward each other, meet at frame
    /// 50 with the farther one hidden behind the nearer, and turn back.
    pub fn two_cross() -> Self {
        let mut s = Scenario::empty("two_cross");
        s.det_noise = 1.0;
        s.dropout = 0.2;
        s.agents = vec![
            Agent {
                id: 1,
                top: [220, 40, 40],
                bottom: [120, 20, 20],
                width: 0.5,
                height: 1.8,
                path: vec![(1, [-3.0, 7.0]), (50, [0.0, 7.0]), (100, [-3.0, 7.0])],
            },
            Agent {
                id: 2,
                top: [40, 80, 230],
                bottom: [20, 40, 120],
                width: 0.5,
                height: 1.8,
                path: vec![(1, [3.0, 7.2]), (50, [0.0, 7.2]), (100, [3.0, 7.2])],
            },
        ];
        s
    }

    /// One agent walking behind a wall, fully hidden for about a second.
    pub fn reid() -> Self {
        let mut s = Scenario::empty("reid");
        s.fps = 10.0;
        s.det_noise = 1.0;
        s.dropout = 0.1;
        s.agents = vec![Agent {
            id: 1,
            top: [230, 200, 40],
            bottom: [40, 130, 60],
            width: 0.5,
            height: 1.8,
            path: vec![(1, [-4.0, 9.0]), (100, [3.92, 9.0])],
        }];
        s.occluders = vec![Occluder { foot: [0.0, 8.0], width: 1.4, height: 2.4, color: [70, 70, 80] }];
        s
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "two_cross" => Some(Self::two_cross()),
            "reid" => Some(Self::reid()),
            _ => None,
        }
    }

    fn drawables(&self, camera: &CalibratedCamera, frame: u32) -> Vec<Drawable> {
        let mut out = Vec::new();
        for a in &self.agents {
            let Some(foot) = a.position(frame) else { continue };
            if let Some(bbox) = camera.project_box(foot, a.width, a.height) {
                out.push(Drawable { bbox, depth: camera.ground_depth(foot), colors: (a.top, a.bottom), agent: Some(a.id), foot });
            }
        }
        for o in &self.occluders {
            if let Some(bbox) = camera.project_box(o.foot, o.width, o.height) {
                out.push(Drawable { bbox, depth: camera.ground_depth(o.foot), colors: (o.color, o.color), agent: None, foot: o.foot });
            }
        }
        // Far to near; ties broken by insertion order.
        out.sort_by(|a, b| b.depth.total_cmp(&a.depth));
        out
    }

    pub fn render(&self, frame: u32) -> RgbImage {
        let camera = self.camera();
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb(self.background));
        for d in self.drawables(&camera, frame) {
            let split = d.bbox.top() + 0.45 * d.bbox.height;
            let x0 = d.bbox.left().max(0.0).floor() as u32;
            let y0 = d.bbox.top().max(0.0).floor() as u32;
            let x1 = (d.bbox.right().ceil().max(0.0) as u32).min(self.width);
            let y1 = (d.bbox.bottom().ceil().max(0.0) as u32).min(self.height);
            for y in y0..y1 {
                let cy = y as f64 + 0.5;
                for x in x0..x1 {
                    if d.bbox.contains(x as f64 + 0.5, cy) {
                        let c = if cy < split { d.colors.0 } else { d.colors.1 };
                        img.put_pixel(x, y, Rgb(c));
                    }
                }
            }
        }
        img
    }

    /// Every agent present in `frame` with the fraction of its box that is
    /// inside the image and not covered by anything nearer.
    pub fn views(&self, frame: u32) -> Vec<AgentView> {
        let camera = self.camera();
        let items = self.drawables(&camera, frame);
        let image = BBox::from_ltwh(0.0, 0.0, self.width as f64, self.height as f64);
        let mut views: Vec<AgentView> = items
            .iter()
            .filter_map(|d| {
                let id = d.agent?;
                let inside = d.bbox.intersection(&image)?;
                let nearer: Vec<BBox> = items.iter().filter(|o| o.depth < d.depth).map(|o| o.bbox).collect();
                let hidden = covered_area(&inside, &nearer);
                let visibility = ((inside.area() - hidden) / d.bbox.area()).clamp(0.0, 1.0);
                Some(AgentView { id, bbox: d.bbox, foot: d.foot, visibility })
            })
            .collect();
        views.sort_by_key(|v| v.id);
        views
    }

    pub fn ground_truth(&self) -> Vec<GroundTruthRecord> {
        (1..=self.frames)
            .flat_map(|f| {
                self.views(f).into_iter().map(move |v| GroundTruthRecord { frame: f, identity: v.id, bbox: v.bbox, world: Some(v.foot) })
            })
            .collect()
    }

    /// Exact boxes of every sufficiently visible agent.
    pub fn perfect_detections(&self) -> FrameDetections {
        self.detections(self.seed, 0.0, 0.0)
    }

    /// Detections with pixel noise and random misses. The miss pattern and
    /// the noise come from separate streams of `seed`, so changing the noise
    /// level leaves the misses unchanged.
    pub fn detections(&self, seed: u64, det_noise: f64, dropout: f64) -> FrameDetections {
        let mut miss_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let normal = Normal::new(0.0, det_noise.max(0.0)).expect("finite sigma");
        let mut records = Vec::new();
        for f in 1..=self.frames {
            for v in self.views(f) {
                let missed = miss_rng.random::<f64>() < dropout;
                let jitter: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut noise_rng));
                if missed || v.visibility < MIN_DETECTABLE {
                    continue;
                }
                let [l, t, w, h] = v.bbox.ltwh();
                let bbox = if det_noise > 0.0 {
                    BBox::from_ltwh(l + jitter[0], t + jitter[1], (w + jitter[2]).max(1.0), (h + jitter[3]).max(1.0))
                } else {
                    v.bbox
                };
                records.push(DetectionRecord { frame: f, bbox, confidence: 1.0 });
            }
        }
        let mut dets = FrameDetections::from_records(records);
        dets.pad_to(self.frames);
        dets
    }

    /// Writes frames, ground truth, detections, calibration and a matching
    /// tracker configuration under `out`.
    pub fn write(&self, out: &Path) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        for sub in ["img1", "det", "gt"] {
            let d = out.join(sub);
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        for f in 1..=self.frames {
            let path = out.join("img1").join(format!("{f:06}.png"));
            self.render(f)
                .save(&path)
                .map_err(|e| SynthError::Encode { path: path.clone(), message: e.to_string() })?;
        }
        let files = [
            (out.join("gt").join("gt.txt"), format_ground_truth(&self.ground_truth())),
            (out.join("det").join("det.txt"), format_detections(&self.detections(self.seed, self.det_noise, self.dropout))),
            (out.join("det").join("det_perfect.txt"), format_detections(&self.perfect_detections())),
            (out.join("calib.txt"), self.camera().to_string()),
            (out.join("tracker.cfg"), format!("fps = {}\nseed = {}\n", self.fps, self.seed)),
            (out.join("scenario.txt"), self.to_text()),
        ];
        for (path, text) in files {
            fs::write(&path, text).map_err(io(&path))?;
        }
        Ok(())
    }
}
