//! Run configuration: an optional JSON file overlaid by command-line flags.
//!
//! Schema (every key optional):
//!
//! ```json
//! {
//!   "preset": "desk",
//!   "model": { "encoder": {..}, "routing": {..}, "classes": 6, "modality": "HL" },
//!   "train": { "epochs": 200, "batch_size": 64, "learning_rate": 0.001, "optimizer": "adam",
//!              "seed": 0, "augment": true, "noise_sigma": 0.05, "modality": "HL" },
//!   "synthetic": { "classes": 6, "height": 64, "width": 64, "bands": 20, "seed": 7, .. },
//!   "dataset": "scene.dynf",
//!   "checkpoint": "model.dynm",
//!   "report_dir": "reports"
//! }
//! ```
//!
//! A full `model` wins over `preset`. Flags win over the file.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dcmnet::model::ModelConfig;
use dcmnet::preprocessing::{SceneCube, SyntheticSpec};
use dcmnet::training::TrainConfig;
use serde::Deserialize;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;
const EXIT_OTHER: u8 = 1;

/// An error paired with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Debug for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait ExitCode<T> {
    fn code(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> ExitCode<T> for Result<T, E> {
    fn code(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

pub fn fail<T>(code: u8, msg: impl fmt::Display) -> CliResult<T> {
    Err(Failure {
        code,
        error: anyhow::anyhow!("{msg}"),
    })
}

/// Exit code for a library error raised while running a command.
pub fn classify(e: dcmnet::Error) -> Failure {
    use dcmnet::Error as E;
    let code = match &e {
        E::Config(_) => EXIT_CONFIG,
        E::Data(_) | E::LabelOutOfRange { .. } => EXIT_DATA,
        E::Checkpoint(_) => EXIT_CHECKPOINT,
        _ => EXIT_OTHER,
    };
    Failure {
        code,
        error: e.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 144 bands, 15 classes, 11x11 patches, c=128, s=3.
    Houston2013,
    /// Small network sized from the dataset.
    Desk,
    /// Smallest network, 6 bands, 3 classes.
    Tiny,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))
            .code(EXIT_CONFIG)?;
        serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
            .code(EXIT_CONFIG)
    }

    /// Model for `cube`: explicit config, then preset, then `desk` sized
    /// from the scene.
    pub fn model_for(&self, preset: Option<Preset>, dims: (usize, usize, usize)) -> ModelConfig {
        match (preset, &self.model) {
            (Some(p), _) => preset_config(p, dims),
            (None, Some(m)) => m.clone(),
            (None, None) => preset_config(self.preset.unwrap_or(Preset::Desk), dims),
        }
    }
}

pub fn preset_config(
    p: Preset,
    (bands, lidar_channels, classes): (usize, usize, usize),
) -> ModelConfig {
    match p {
        Preset::Houston2013 => ModelConfig::houston2013(),
        Preset::Desk => ModelConfig::desk(bands, lidar_channels, classes),
        Preset::Tiny => ModelConfig::tiny(),
    }
}

pub fn scene_dims(cube: &SceneCube) -> (usize, usize, usize) {
    (cube.bands(), cube.lidar_channels(), cube.classes)
}

/// `flag`, else the file value, else an error naming the flag.
pub fn require_path(
    flag: Option<PathBuf>,
    file: &Option<PathBuf>,
    name: &str,
) -> CliResult<PathBuf> {
    match flag.or_else(|| file.clone()) {
        Some(p) => Ok(p),
        None => fail(
            EXIT_CONFIG,
            format!("--{name} is required (flag or config file)"),
        ),
    }
}

pub fn check_input(path: &Path, code: u8, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        fail(code, format!("{what} {} does not exist", path.display()))
    }
}

/// The parent directory of an output path must already exist.
pub fn check_output(path: &Path) -> CliResult<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        fail(
            EXIT_CONFIG,
            format!("output directory {} does not exist", parent.display()),
        )
    }
}

/// `flag`, else `report_dir/name`, else `fallback`.
pub fn output_path(
    flag: Option<PathBuf>,
    report_dir: &Option<PathBuf>,
    name: &str,
    fallback: PathBuf,
) -> PathBuf {
    flag.or_else(|| report_dir.as_ref().map(|d| d.join(name)))
        .unwrap_or(fallback)
}
