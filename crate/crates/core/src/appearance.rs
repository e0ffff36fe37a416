//! Online adaptive appearance model.
//!
//! Every cell `u` of the normalized template keeps a small set of previously
//! observed feature vectors. New observations enter a cell with a probability
//! given by a logistic function of their distance to the closest stored
//! sample, optionally attenuated by a Gaussian of the cell's distance to the
//! visible region's center of mass. Once a cell is full, a uniformly chosen
//! stored sample is replaced instead. Similarity to a new observation is the
//! fraction of stored samples that match it, so it always lies in `[0, 1]`.
//!
//! Channels are partitioned into groups (color, texture, edge), each with its
//! own distance threshold. A stored sample matches when every group is within
//! its threshold.

use std::io::{self, Read, Write};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ChannelGroup, FeatureGrid, FeatureSet, VisibilityMask};

#[derive(Debug, Error, PartialEq)]
pub enum AppearanceError {
    #[error("sample set is empty")]
    EmptyCell,
    #[error("dimension mismatch: model {model:?}, input {input:?}")]
    DimensionMismatch {
        model: (usize, usize, usize),
        input: (usize, usize, usize),
    },
}

/// Seeded random stream driving the stochastic update policy.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// Distance thresholds per channel group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub color: f64,
    pub texture: f64,
    pub edge: f64,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self { color: 30.0, texture: 30.0, edge: 30.0 }
    }
}

impl GroupThresholds {
    pub fn get(&self, group: ChannelGroup) -> f64 {
        match group {
            ChannelGroup::Color => self.color,
            ChannelGroup::Texture => self.texture,
            ChannelGroup::Edge => self.edge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GroupSpec {
    group: ChannelGroup,
    start: usize,
    len: usize,
    tau: f64,
    /// Smallest integer `>= tau^2`, so `d2 < limit` iff `sqrt(d2) < tau`.
    limit: u32,
}

#[inline]
fn squared_distance(a: &[u8], b: &[u8]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i32 - y as i32;
            (d * d) as u32
        })
        .sum()
}

#[inline]
fn logistic_rate(excess: f64) -> f64 {
    1.0 / (1.0 + excess.exp())
}

/// Learning rate of one cell against a single pooled threshold: the logistic
/// of the distance from `observed` to its closest stored sample, centered on
/// `tau_f`. `sample_set` is the cell's stored vectors back to back.
pub fn learning_rate(sample_set: &[u8], observed: &[u8], tau_f: f64) -> Result<f64, AppearanceError> {
    let ch = observed.len();
    if sample_set.is_empty() || ch == 0 {
        return Err(AppearanceError::EmptyCell);
    }
    let nearest = sample_set
        .chunks_exact(ch)
        .map(|s| squared_distance(s, observed))
        .min()
        .ok_or(AppearanceError::EmptyCell)?;
    Ok(logistic_rate((nearest as f64).sqrt() - tau_f))
}

/// Gaussian attenuation by the cell's offset from the visible center of mass.
#[inline]
pub fn spatial_weight(u: [f64; 2], center: [f64; 2], width: usize, height: usize) -> f64 {
    let d2 = (u[0] - center[0]).powi(2) + (u[1] - center[1]).powi(2);
    let spread = 2.0 * ((width * width + height * height) as f64);
    (-d2 / spread).exp()
}

pub fn spatial_learning_rate(
    sample_set: &[u8],
    observed: &[u8],
    tau_f: f64,
    u: [f64; 2],
    center: [f64; 2],
    width: usize,
    height: usize,
) -> Result<f64, AppearanceError> {
    Ok(learning_rate(sample_set, observed, tau_f)? * spatial_weight(u, center, width, height))
}

/// Center of mass of the visible cells, in cell coordinates.
pub fn visible_center(mask: &VisibilityMask) -> Option<[f64; 2]> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in mask.bits.iter().enumerate().filter(|(_, &b)| b) {
        sx += (i % mask.width) as f64;
        sy += (i / mask.width) as f64;
        n += 1;
    }
    (n > 0).then(|| [sx / n as f64, sy / n as f64])
}

/// Per-cell sample sets for one target.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    width: usize,
    height: usize,
    channels: usize,
    n_max: usize,
    groups: Vec<GroupSpec>,
    counts: Vec<u16>,
    /// `cells * n_max * channels` bytes; cell `u` sample `k` starts at
    /// `(u * n_max + k) * channels`.
    samples: Vec<u8>,
}

impl AppearanceModel {
    pub fn new(width: usize, height: usize, features: FeatureSet, thresholds: GroupThresholds, n_max: usize) -> Self {
        assert!(n_max >= 1 && n_max <= u16::MAX as usize);
        let groups = features
            .layout()
            .into_iter()
            .map(|(group, start, len)| {
                let tau = thresholds.get(group);
                GroupSpec { group, start, len, tau, limit: (tau * tau).ceil().min(u32::MAX as f64) as u32 }
            })
            .collect();
        let channels = features.channels();
        let cells = width * height;
        Self {
            width,
            height,
            channels,
            n_max,
            groups,
            counts: vec![0; cells],
            samples: vec![0; cells * n_max * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn count(&self, u: usize) -> usize {
        self.counts[u] as usize
    }

    /// Stored vectors of cell `u`, back to back.
    pub fn cell_samples(&self, u: usize) -> &[u8] {
        let base = u * self.n_max * self.channels;
        &self.samples[base..base + self.counts[u] as usize * self.channels]
    }

    pub fn sample(&self, u: usize, k: usize) -> &[u8] {
        let at = (u * self.n_max + k) * self.channels;
        &self.samples[at..at + self.channels]
    }

    fn check_dims(&self, grid: &FeatureGrid, mask: &VisibilityMask) -> Result<(), AppearanceError> {
        let model = (self.width, self.height, self.channels);
        for input in [(grid.width, grid.height, grid.channels), (mask.width, mask.height, self.channels)] {
            if input != model {
                return Err(AppearanceError::DimensionMismatch { model, input });
            }
        }
        Ok(())
    }

    /// Worst group distance relative to that group's threshold.
    #[inline]
    fn excess(&self, a: &[u8], b: &[u8]) -> f64 {
        self.groups
            .iter()
            .map(|g| {
                let d2 = squared_distance(&a[g.start..g.start + g.len], &b[g.start..g.start + g.len]);
                (d2 as f64).sqrt() - g.tau
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[inline]
    fn matches(&self, a: &[u8], b: &[u8]) -> bool {
        self.groups.iter().all(|g| {
            squared_distance(&a[g.start..g.start + g.len], &b[g.start..g.start + g.len]) < g.limit
        })
    }

    /// Group-aware learning rate of cell `u` for `observed`. With a single
    /// group this is exactly [`learning_rate`] at that group's threshold.
    pub fn cell_learning_rate(&self, u: usize, observed: &[u8]) -> Result<f64, AppearanceError> {
        let samples = self.cell_samples(u);
        if samples.is_empty() {
            return Err(AppearanceError::EmptyCell);
        }
        let nearest = samples
            .chunks_exact(self.channels)
            .map(|s| self.excess(s, observed))
            .fold(f64::INFINITY, f64::min);
        Ok(logistic_rate(nearest))
    }

    /// Stochastic update from one observation. Only visible cells are
    /// touched; random draws happen in cell index order.
    pub fn update(
        &mut self,
        grid: &FeatureGrid,
        mask: &VisibilityMask,
        rng: &mut Rng,
        spatial: bool,
    ) -> Result<(), AppearanceError> {
        self.check_dims(grid, mask)?;
        let center = if spatial { visible_center(mask) } else { None };
        for u in 0..self.cells() {
            if !mask.bits[u] {
                continue;
            }
            let observed = grid.cell(u);
            let count = self.counts[u] as usize;
            if count == 0 {
                self.store(u, 0, observed);
                self.counts[u] = 1;
                continue;
            }
            let mut alpha = self.cell_learning_rate(u, observed)?;
            if let Some(c) = center {
                let pos = [(u % self.width) as f64, (u / self.width) as f64];
                alpha *= spatial_weight(pos, c, self.width, self.height);
            }
            if rng.uniform() >= alpha {
                continue;
            }
            if count < self.n_max {
                self.store(u, count, observed);
                self.counts[u] += 1;
            } else {
                let k = rng.index(count);
                self.store(u, k, observed);
            }
        }
        Ok(())
    }

    fn store(&mut self, u: usize, k: usize, v: &[u8]) {
        let at = (u * self.n_max + k) * self.channels;
        self.samples[at..at + self.channels].copy_from_slice(v);
    }

    /// Number of stored samples of cell `u` matching `observed` in every group.
    pub fn cell_matches(&self, u: usize, observed: &[u8]) -> usize {
        self.cell_samples(u)
            .chunks_exact(self.channels)
            .filter(|s| self.matches(s, observed))
            .count()
    }

    /// Fraction of stored samples over visible, non-empty cells that match
    /// the observation, normalized by `n_max` per cell.
    pub fn similarity(&self, grid: &FeatureGrid, mask: &VisibilityMask) -> Result<f64, AppearanceError> {
        self.check_dims(grid, mask)?;
        let mut matched = 0usize;
        let mut effective = 0usize;
        for u in 0..self.cells() {
            if !mask.bits[u] || self.counts[u] == 0 {
                continue;
            }
            effective += 1;
            matched += self.cell_matches(u, grid.cell(u));
        }
        if effective == 0 {
            return Ok(0.0);
        }
        Ok(matched as f64 / (effective * self.n_max) as f64)
    }

    /// Fills cell `u` with explicit samples (test fixtures and dump loading).
    pub fn set_cell(&mut self, u: usize, samples: &[&[u8]]) {
        assert!(samples.len() <= self.n_max);
        for (k, s) in samples.iter().enumerate() {
            assert_eq!(s.len(), self.channels);
            self.store(u, k, s);
        }
        self.counts[u] = samples.len() as u16;
    }

    pub fn dump(&self) -> ModelDump {
        ModelDump {
            width: self.width(),
            height: self.height(),
            n_max: self.n_max,
            channels: self.channels,
            color: self.groups.first().is_some_and(|g| g.group == ChannelGroup::Color),
            cells: (0..self.cells()).map(|u| self.cell_samples(u).to_vec()).collect(),
        }
    }
}

/// Plain binary snapshot of a model's stored samples.
///
/// Layout, all integers little-endian `u32`: `width`, `height`, `n_max`,
/// `channels`, `color` (1 when channels 0..3 are RGB), then for each of the `width * height` cells in row-major
/// order its sample count followed by `count * channels` raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDump {
    pub width: usize,
    pub height: usize,
    pub n_max: usize,
    pub channels: usize,
    pub color: bool,
    pub cells: Vec<Vec<u8>>,
}

impl ModelDump {
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for v in [self.width, self.height, self.n_max, self.channels, self.color as usize] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for cell in &self.cells {
            w.write_all(&((cell.len() / self.channels.max(1)) as u32).to_le_bytes())?;
            w.write_all(cell)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> io::Result<Self> {
        let mut word = || -> io::Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let (width, height, n_max, channels, color) = (word()?, word()?, word()?, word()?, word()? != 0);
        let d = width
            .checked_mul(height)
            .filter(|&d| d <= 1 << 24)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "grid too large"))?;
        let mut cells = Vec::with_capacity(d);
        for _ in 0..d {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            let count = u32::from_le_bytes(b) as usize;
            if count > n_max {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "cell count exceeds n_max"));
            }
            let mut cell = vec![0u8; count * channels];
            r.read_exact(&mut cell)?;
            cells.push(cell);
        }
        Ok(Self { width, height, n_max, channels, color, cells })
    }

    /// Mean of the stored samples per cell and channel; empty cells give `None`.
    pub fn mean(&self) -> Vec<Option<Vec<f64>>> {
        self.cells
            .iter()
            .map(|cell| {
                let n = cell.len() / self.channels.max(1);
                (n > 0).then(|| {
                    (0..self.channels)
                        .map(|c| cell.iter().skip(c).step_by(self.channels).map(|&v| v as f64).sum::<f64>() / n as f64)
                        .collect()
                })
            })
            .collect()
    }
}
