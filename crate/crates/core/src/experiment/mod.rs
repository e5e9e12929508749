//! Configuration, figure presets and output plumbing.

pub mod config;
pub mod manifest;
pub mod plotdata;
pub mod presets;

pub use config::{ConfigError, ExperimentConfig, Violation};
pub use manifest::{OutputSet, RunManifest};
pub use plotdata::{emit_plotdata, PlotStyle, Product};
pub use presets::{run_preset, Preset, PresetOutput, RunError};
