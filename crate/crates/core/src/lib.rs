//! Online adaptive appearance modeling and 3D multi-object tracking by
//! detection.

pub mod appearance;
pub mod assignment;
pub mod association;
pub mod bbox;
pub mod cli;
pub mod config;
pub mod features;
pub mod geometry;
pub mod ingest;
pub mod kalman;
pub mod metrics;
pub mod parallel;
pub mod pipeline;
pub mod property_model;
pub mod render;
pub mod synth;

pub use bbox::BBox;
pub use geometry::{CalibratedCamera, Geometry3D};
pub use config::TrackerConfig;
pub use pipeline::Tracker;
