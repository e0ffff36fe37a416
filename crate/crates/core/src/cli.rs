//! Command-line surface: `track`, `evaluate`, `render` and `synth`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::appearance::ModelDump;
use crate::config::{ConfigError, TrackerConfig};
use crate::geometry::{CalibratedCamera, GeometryError};
use crate::ingest::{load_detections, load_ground_truth, write_tracks, FrameSequence, IngestError};
use crate::metrics::{evaluate, EvalMode, MetricsError, MetricsReport};
use crate::parallel;
use crate::pipeline::{PipelineError, Tracker};
use crate::render::{model_sheet, Overlay, DEFAULT_TRAIL};
use crate::synth::{Scenario, SynthError};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "MOANA_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("calibration {path}: {source}")]
    Calibration {
        path: String,
        #[source]
        source: GeometryError,
    },
    #[error("{path}: {source}")]
    Scenario {
        path: String,
        #[source]
        source: SynthError,
    },
    #[error("{path}: {message}")]
    Output { path: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Output { path: path.display().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "moana", version, about = "Online adaptive appearance model multi-object tracker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a sequence and write MOTChallenge-style results.
    Track(TrackArgs),
    /// Score results against ground truth with CLEAR-MOT metrics.
    Evaluate(EvaluateArgs),
    /// Draw results over the sequence frames.
    Render(RenderArgs),
    /// Generate a synthetic sequence from a scenario.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    /// Sequence directory holding `%06d` frames, directly or under `img1/`.
    #[arg(long)]
    pub seq: PathBuf,
    /// Detection file (`frame,id,left,top,width,height,conf,...`).
    #[arg(long)]
    pub det: PathBuf,
    /// Calibration file with the 3x4 projection matrix.
    #[arg(long)]
    pub calib: PathBuf,
    /// Tracker configuration (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Result file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Writes each confirmed track's appearance model as `<id>.model` here.
    #[arg(long)]
    pub dump_models: Option<PathBuf>,
    /// Runs every stage on the calling thread.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "2d")]
    TwoD,
    #[value(name = "3d")]
    ThreeD,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TwoD => EvalMode::TwoD,
            ModeArg::ThreeD => EvalMode::ThreeD,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub res: PathBuf,
    #[arg(long, value_enum, default_value = "3d")]
    pub mode: ModeArg,
    /// Match threshold: meters in 3D (default 1), IoU in 2D (default 0.5).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Prints comma-separated raw values instead of the table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub res: PathBuf,
    /// Output directory for `%06d.png` frames.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of `<id>.model` dumps; adds `models.png` with averaged models.
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Frames of foot history drawn behind each box.
    #[arg(long, default_value_t = DEFAULT_TRAIL)]
    pub trail: u32,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Built-in scenario name (`two_cross`, `reid`) or scenario file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Standard deviation of detection corner noise, in pixels.
    #[arg(long)]
    pub det_noise: Option<f64>,
    /// Probability that a visible agent's detection is dropped.
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Paths that fed a tracking run.
#[derive(Debug, Clone, Serialize)]
pub struct RunInputs {
    pub seq: PathBuf,
    pub det: PathBuf,
    pub calib: PathBuf,
    pub config: Option<PathBuf>,
}

/// Provenance record written next to every result file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub inputs: RunInputs,
    pub seed: u64,
    pub config: TrackerConfig,
    pub frames: u32,
    pub tracks: usize,
    pub elapsed_seconds: f64,
    pub fps_achieved: f64,
}

/// Where the manifest for result file `out` goes.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| CliError::output(p, e)),
        _ => Ok(()),
    }
}

pub fn cmd_track(args: &TrackArgs) -> Result<RunManifest, CliError> {
    let mut config = match &args.config {
        Some(p) => TrackerConfig::load(p)?,
        None => TrackerConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let camera = CalibratedCamera::load(&args.calib).map_err(|source| match source {
        GeometryError::Io { .. } => CliError::Geometry(source),
        _ => CliError::Calibration { path: args.calib.display().to_string(), source },
    })?;
    let seq = FrameSequence::open(&args.seq)?;
    let detections = load_detections(&args.det, config.min_confidence)?;
    let frames = seq.len();

    let mode = if args.sequential { parallel::Execution::Sequential } else { parallel::Execution::Parallel };
    let mut tracker = Tracker::new(config.clone(), camera)?.with_execution(mode);
    let start = Instant::now();
    for f in 1..=frames {
        let image = seq.load(f)?;
        tracker.step(f, &image, detections.frame(f))?;
    }
    if let Some(dir) = &args.dump_models {
        fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
        for (id, model) in tracker.confirmed_models() {
            let path = dir.join(format!("{id}.model"));
            let file = fs::File::create(&path).map_err(|e| CliError::output(&path, e))?;
            model.dump().write_to(std::io::BufWriter::new(file)).map_err(|e| CliError::output(&path, e))?;
        }
    }
    let tracks = tracker.finalize();
    let elapsed = start.elapsed().as_secs_f64();

    create_parent(&args.out)?;
    write_tracks(&args.out, &tracks)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: RunInputs { seq: args.seq.clone(), det: args.det.clone(), calib: args.calib.clone(), config: args.config.clone() },
        seed: config.seed,
        config,
        frames,
        tracks: tracks.len(),
        elapsed_seconds: elapsed,
        fps_achieved: if elapsed > 0.0 { frames as f64 / elapsed } else { 0.0 },
    };
    let path = manifest_path(&args.out);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::output(&path, e))?;
    fs::write(&path, json + "\n").map_err(|e| CliError::output(&path, e))?;
    Ok(manifest)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<MetricsReport, CliError> {
    let gt = load_ground_truth(&args.gt)?;
    let res = load_ground_truth(&args.res)?;
    let mode = EvalMode::from(args.mode);
    let threshold = args.threshold.unwrap_or(mode.default_threshold());
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(CliError::Usage(format!("threshold must be a non-negative number, got {threshold}")));
    }
    Ok(evaluate(&gt, &res, mode, threshold)?)
}

/// Returns the number of frames written.
pub fn cmd_render(args: &RenderArgs) -> Result<u32, CliError> {
    let seq = FrameSequence::open(&args.seq)?;
    let records = load_ground_truth(&args.res)?;
    let mut overlay = Overlay::new(&records);
    overlay.trail = args.trail;
    fs::create_dir_all(&args.out).map_err(|e| CliError::output(&args.out, e))?;
    let frames = seq.len();
    for f in 1..=frames {
        let mut img = seq.load(f)?;
        overlay.draw(&mut img, f);
        let path = args.out.join(format!("{f:06}.png"));
        img.save(&path).map_err(|e| CliError::output(&path, e))?;
    }
    if let Some(dir) = &args.models {
        let models = load_models(dir)?;
        let path = args.out.join("models.png");
        model_sheet(&models, 2).save(&path).map_err(|e| CliError::output(&path, e))?;
    }
    Ok(frames)
}

/// Reads every `<id>.model` file in `dir`, ordered by identity.
pub fn load_models(dir: &Path) -> Result<Vec<(u64, ModelDump)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::output(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::output(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("model") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        let file = fs::File::open(&path).map_err(|e| CliError::output(&path, e))?;
        let dump = ModelDump::read_from(std::io::BufReader::new(file)).map_err(|e| CliError::output(&path, e))?;
        out.push((id, dump));
    }
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

pub fn load_scenario(name: &str) -> Result<Scenario, CliError> {
    if let Some(s) = Scenario::builtin(name) {
        return Ok(s);
    }
    Scenario::load(name).map_err(|source| CliError::Scenario { path: name.to_string(), source })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Scenario, CliError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(v) = args.det_noise {
        scenario.det_noise = v;
    }
    if let Some(v) = args.dropout {
        scenario.dropout = v;
    }
    if let Some(v) = args.seed {
        scenario.seed = v;
    }
    scenario
        .validate()
        .map_err(|source| CliError::Scenario { path: args.scenario.clone(), source })?;
    scenario
        .write(&args.out)
        .map_err(|source| CliError::Scenario { path: args.out.display().to_string(), source })?;
    Ok(scenario)
}

/// Applies `MOANA_THREADS` when set.
pub fn apply_thread_limit() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            parallel::init_threads(n);
            Ok(())
        }
        _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
    }
}

/// Runs one parsed command, printing its report; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = apply_thread_limit().and_then(|()| match &cli.command {
        Command::Track(a) => cmd_track(a).map(|m| {
            eprintln!("{} tracks over {} frames at {:.1} Hz -> {}", m.tracks, m.frames, m.fps_achieved, a.out.display());
        }),
        Command::Evaluate(a) => cmd_evaluate(a).map(|r| {
            if a.csv {
                print!("{}", r.to_csv());
            } else {
                print!("{r}");
            }
        }),
        Command::Render(a) => cmd_render(a).map(|n| eprintln!("{n} frames -> {}", a.out.display())),
        Command::Synth(a) => cmd_synth(a).map(|s| {
            eprintln!("{} ({} frames, {} agents) -> {}", s.name, s.frames, s.agents.len(), a.out.display());
        }),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
