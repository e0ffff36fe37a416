//! Tracker configuration and its flat `key = value` text format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::appearance::GroupThresholds;
use crate::features::FeatureSet;
use crate::kalman::KalmanParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: line {line}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, line: usize, key: String },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackerConfig {
    pub tau_f_color: f64,
    pub tau_f_texture: f64,
    pub tau_f_edge: f64,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Association gate on the depth-compensated foot distance, meters.
    pub tau_p: f64,
    /// Minimum similarity for re-identification.
    pub tau_s: f64,
    pub eta_d: f64,
    pub c_d: f64,
    pub fps: f64,
    /// Samples per cell; `None` means three seconds of frames.
    pub n_max: Option<usize>,
    pub kalman: KalmanParams,
    pub min_count: u64,
    pub sigma_floor: [f64; 4],
    pub confirm_hits: u32,
    /// Consecutive misses a confirmed track stays in association before it
    /// is declared lost; `None` means 0.3 seconds.
    pub max_coast: Option<u32>,
    /// Frames a lost target is kept; `None` means three seconds.
    pub max_lost: Option<u32>,
    pub min_confidence: f64,
    pub spatial_weighting: bool,
    pub features: FeatureSet,
    pub seed: u64,
    /// Appearance-based scoring of grouped observations. When off, grouped
    /// observations go to the nearest predicted foot point greedily.
    pub cross_matching: bool,
    pub reidentification: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_f_color: 30.0,
            tau_f_texture: 30.0,
            tau_f_edge: 30.0,
            grid_w: 64,
            grid_h: 64,
            tau_p: 2.0,
            tau_s: 0.30,
            eta_d: 1.0 / 30.0,
            c_d: 1.0,
            fps: 25.0,
            n_max: None,
            kalman: KalmanParams::default(),
            min_count: 10,
            sigma_floor: [0.05; 4],
            confirm_hits: 3,
            max_coast: None,
            max_lost: None,
            min_confidence: f64::NEG_INFINITY,
            spatial_weighting: true,
            features: FeatureSet::default(),
            seed: 0,
            cross_matching: true,
            reidentification: true,
        }
    }
}

const KEYS: &[&str] = &[
    "tau_f_color",
    "tau_f_texture",
    "tau_f_edge",
    "grid_w",
    "grid_h",
    "tau_p",
    "tau_s",
    "eta_d",
    "c_d",
    "fps",
    "n_max",
    "q_pos",
    "q_vel",
    "q_size",
    "r_pos",
    "r_size",
    "init_sigma_pos",
    "init_sigma_vel",
    "init_sigma_size",
    "min_count",
    "sigma_floor",
    "confirm_hits",
    "max_coast",
    "max_lost",
    "min_confidence",
    "spatial_weighting",
    "features",
    "seed",
    "cross_matching",
    "reidentification",
];

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid number `{v}`"))
}

/// `auto` selects the default rule.
fn parse_auto<T: std::str::FromStr>(v: &str) -> Result<Option<T>, String> {
    if v.eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

impl TrackerConfig {
    pub fn thresholds(&self) -> GroupThresholds {
        GroupThresholds { color: self.tau_f_color, texture: self.tau_f_texture, edge: self.tau_f_edge }
    }

    pub fn n_max(&self) -> usize {
        self.n_max.unwrap_or_else(|| ((3.0 * self.fps).round() as usize).clamp(3, 128))
    }

    pub fn max_coast(&self) -> u32 {
        self.max_coast.unwrap_or_else(|| (0.3 * self.fps).round() as u32)
    }

    pub fn max_lost(&self) -> u32 {
        self.max_lost.unwrap_or_else(|| (3.0 * self.fps).round() as u32)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("tau_f_color", self.tau_f_color),
            ("tau_f_texture", self.tau_f_texture),
            ("tau_f_edge", self.tau_f_edge),
            ("tau_p", self.tau_p),
            ("tau_s", self.tau_s),
            ("eta_d", self.eta_d),
            ("c_d", self.c_d),
            ("fps", self.fps),
            ("r_pos", self.kalman.r_pos),
            ("r_size", self.kalman.r_size),
            ("init_sigma_pos", self.kalman.init_sigma_pos),
            ("init_sigma_vel", self.kalman.init_sigma_vel),
            ("init_sigma_size", self.kalman.init_sigma_size),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("q_pos", self.kalman.q_pos), ("q_vel", self.kalman.q_vel), ("q_size", self.kalman.q_size)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.grid_w < 3 || self.grid_h < 3 {
            return Err(ConfigError::Invalid("grid must be at least 3x3".into()));
        }
        if self.n_max == Some(0) || self.n_max.is_some_and(|n| n > u16::MAX as usize) {
            return Err(ConfigError::Invalid("n_max out of range".into()));
        }
        if self.confirm_hits == 0 {
            return Err(ConfigError::Invalid("confirm_hits must be positive".into()));
        }
        if self.sigma_floor.iter().any(|&s| !(s > 0.0)) {
            return Err(ConfigError::Invalid("sigma_floor entries must be positive".into()));
        }
        if self.features.is_empty() {
            return Err(ConfigError::Invalid("feature selector is empty".into()));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let k = &mut self.kalman;
        match key {
            "tau_f_color" => self.tau_f_color = parse_num(v)?,
            "tau_f_texture" => self.tau_f_texture = parse_num(v)?,
            "tau_f_edge" => self.tau_f_edge = parse_num(v)?,
            "grid_w" => self.grid_w = parse_num(v)?,
            "grid_h" => self.grid_h = parse_num(v)?,
            "tau_p" => self.tau_p = parse_num(v)?,
            "tau_s" => self.tau_s = parse_num(v)?,
            "eta_d" => self.eta_d = parse_num(v)?,
            "c_d" => self.c_d = parse_num(v)?,
            "fps" => self.fps = parse_num(v)?,
            "n_max" => self.n_max = parse_auto(v)?,
            "q_pos" => k.q_pos = parse_num(v)?,
            "q_vel" => k.q_vel = parse_num(v)?,
            "q_size" => k.q_size = parse_num(v)?,
            "r_pos" => k.r_pos = parse_num(v)?,
            "r_size" => k.r_size = parse_num(v)?,
            "init_sigma_pos" => k.init_sigma_pos = parse_num(v)?,
            "init_sigma_vel" => k.init_sigma_vel = parse_num(v)?,
            "init_sigma_size" => k.init_sigma_size = parse_num(v)?,
            "min_count" => self.min_count = parse_num(v)?,
            "sigma_floor" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse_num(p.trim())).collect::<Result<_, _>>()?;
                self.sigma_floor = match parts.as_slice() {
                    [s] => [*s; 4],
                    [a, b, c, d] => [*a, *b, *c, *d],
                    _ => return Err("sigma_floor takes one or four values".into()),
                };
            }
            "confirm_hits" => self.confirm_hits = parse_num(v)?,
            "max_coast" => self.max_coast = parse_auto(v)?,
            "max_lost" => self.max_lost = parse_auto(v)?,
            "min_confidence" => self.min_confidence = parse_num(v)?,
            "spatial_weighting" => self.spatial_weighting = parse_bool(v)?,
            "features" => self.features = FeatureSet::parse(v).ok_or_else(|| format!("invalid feature selector `{v}`"))?,
            "seed" => self.seed = parse_num(v)?,
            "cross_matching" => self.cross_matching = parse_bool(v)?,
            "reidentification" => self.reidentification = parse_bool(v)?,
            _ => unreachable!("key list and setter disagree"),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored; unknown keys are errors.
    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let perr = |message: String| ConfigError::Parse { path: path.to_path_buf(), line: i + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| perr("expected `key = value`".into()))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { path: path.to_path_buf(), line: i + 1, key: key.to_string() });
            }
            cfg.set(key, value.trim()).map_err(perr)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(path, &text)
    }

    /// Every key with its current value, in a form `parse` accepts.
    pub fn to_text(&self) -> String {
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let k = &self.kalman;
        let mut s = String::new();
        let mut put = |key: &str, v: String| {
            let _ = writeln!(s, "{key} = {v}");
        };
        put("tau_f_color", self.tau_f_color.to_string());
        put("tau_f_texture", self.tau_f_texture.to_string());
        put("tau_f_edge", self.tau_f_edge.to_string());
        put("grid_w", self.grid_w.to_string());
        put("grid_h", self.grid_h.to_string());
        put("tau_p", self.tau_p.to_string());
        put("tau_s", self.tau_s.to_string());
        put("eta_d", self.eta_d.to_string());
        put("c_d", self.c_d.to_string());
        put("fps", self.fps.to_string());
        put("n_max", auto(self.n_max.map(|n| n.to_string())));
        put("q_pos", k.q_pos.to_string());
        put("q_vel", k.q_vel.to_string());
        put("q_size", k.q_size.to_string());
        put("r_pos", k.r_pos.to_string());
        put("r_size", k.r_size.to_string());
        put("init_sigma_pos", k.init_sigma_pos.to_string());
        put("init_sigma_vel", k.init_sigma_vel.to_string());
        put("init_sigma_size", k.init_sigma_size.to_string());
        put("min_count", self.min_count.to_string());
        put("sigma_floor", self.sigma_floor.map(|v| v.to_string()).join(","));
        put("confirm_hits", self.confirm_hits.to_string());
        put("max_coast", auto(self.max_coast.map(|n| n.to_string())));
        put("max_lost", auto(self.max_lost.map(|n| n.to_string())));
        put("min_confidence", self.min_confidence.to_string());
        put("spatial_weighting", self.spatial_weighting.to_string());
        put("features", self.features.selector());
        put("seed", self.seed.to_string());
        put("cross_matching", self.cross_matching.to_string());
        put("reidentification", self.reidentification.to_string());
        s
    }
}
