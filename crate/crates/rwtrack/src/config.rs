//! JSON configuration files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rwtrack_core::geometry::MicArrayGeometry;
use rwtrack_core::pipeline::{GridConfig, PipelineConfig};
use rwtrack_core::simulator::SceneSpec;
use rwtrack_core::spectral::SpectralConfig;
use rwtrack_core::tracker::TrackerConfig;

use crate::error::{CliError, Result};

/// Stream format of `localize` and `track`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

/// Sample encoding of WAV files written by `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    I16,
    #[default]
    F32,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub format: Format,
    pub sample_format: SampleFormat,
}

/// Contents of a `--config` file: the pipeline settings plus output
/// options. Every field is optional and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub geometry: MicArrayGeometry,
    pub spectral: SpectralConfig,
    pub grid: GridConfig,
    pub frames_per_update: usize,
    pub sources_per_frame: usize,
    pub tracker: TrackerConfig,
    pub seed: u64,
    pub output: OutputConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self::from_pipeline(PipelineConfig::default())
    }
}

impl AppConfig {
    pub fn from_pipeline(p: PipelineConfig) -> Self {
        Self {
            geometry: p.geometry,
            spectral: p.spectral,
            grid: p.grid,
            frames_per_update: p.frames_per_update,
            sources_per_frame: p.sources_per_frame,
            tracker: p.tracker,
            seed: p.seed,
            output: OutputConfig::default(),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            geometry: self.geometry.clone(),
            spectral: self.spectral.clone(),
            grid: self.grid.clone(),
            frames_per_update: self.frames_per_update,
            sources_per_frame: self.sources_per_frame,
            tracker: self.tracker.clone(),
            seed: self.seed,
        }
    }

    /// Parses and validates a configuration.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AppConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| CliError::Config(format!("{}: {what}: {e}", path.display())))
}

/// Loads and validates a scene description.
pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let scene: SceneSpec = parse(path, "scene")?;
    scene.validate()?;
    Ok(scene)
}
