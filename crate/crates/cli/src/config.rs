//! Run configuration: a TOML file whose `model` and `train` tables start
//! from a named preset and override individual fields.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scenecast::checkpoint::BasisSpec;
use scenecast::data::{SkeletonSpec, SynthConfig};
use scenecast::denoiser::{Ablation, DenoiserConfig};
use scenecast::diffusion::TrainConfig;
use scenecast::metrics::EvalConfig;
use serde::{Deserialize, Serialize};

pub const RESOLVED: &str = "resolved_config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Recording directories used for training.
    pub train: Vec<PathBuf>,
    /// Recording directories used for sampling and evaluation.
    pub test: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub train_recordings: usize,
    pub test_recordings: usize,
    pub scene: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            train_recordings: 4,
            test_recordings: 1,
            scene: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub input_frames: usize,
    pub total_frames: usize,
    /// Start offset between training windows.
    pub train_stride: usize,
    /// Start offset between sampled windows.
    pub sample_stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            input_frames: 25,
            total_frames: 275,
            train_stride: 25,
            sample_stride: 275,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    /// Forecasts per window.
    pub samples: usize,
    pub ablation: Ablation,
    /// Upper bound on sampled windows per run; 0 means all.
    pub max_windows: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            samples: 2,
            ablation: Ablation::default(),
            max_windows: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Checkpoint interval in steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    /// Randomly chosen forecast trajectories drawn in the trajectory plot.
    pub trajectories: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self { trajectories: 20 }
    }
}

/// Fully resolved settings. Writing and re-reading it reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every stochastic component: data, initialization, training,
    /// sampling and the realism classifier.
    pub seed: u64,
    pub data: DataConfig,
    pub skeleton: SkeletonSpec,
    pub synth: SynthSection,
    pub window: WindowConfig,
    pub basis: BasisSpec,
    pub output: OutputConfig,
    pub sample: SampleConfig,
    pub plot: PlotConfig,
    pub eval: EvalConfig,
    pub model: DenoiserConfig,
    pub train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    data: DataConfig,
    #[serde(default)]
    skeleton: SkeletonSpec,
    #[serde(default)]
    synth: SynthSection,
    #[serde(default)]
    window: WindowConfig,
    #[serde(default)]
    basis: BasisSpec,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default)]
    sample: SampleConfig,
    #[serde(default)]
    plot: PlotConfig,
    #[serde(default)]
    eval: EvalConfig,
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: toml::Table,
}

/// Deserializes `preset` with the fields of `overrides` replaced.
fn overlay<T: Serialize + serde::de::DeserializeOwned>(preset: T, overrides: toml::Table, what: &str) -> Result<T> {
    let mut base = toml::Table::try_from(preset).with_context(|| format!("serializing the {what} preset"))?;
    base.extend(overrides);
    toml::Value::Table(base)
        .try_into()
        .with_context(|| format!("invalid [{what}] table"))
}

fn take_preset(table: &mut toml::Table, what: &str) -> Result<String> {
    match table.remove("preset") {
        None => Ok("desk".into()),
        Some(toml::Value::String(s)) => Ok(s),
        Some(v) => bail!("[{what}] preset must be a string, got {v}"),
    }
}

/// Flag values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &Overrides) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).context("invalid config file")?;
        let mut model_table = raw.model;
        let model_preset = match take_preset(&mut model_table, "model")?.as_str() {
            "paper" => DenoiserConfig::paper(),
            "desk" => DenoiserConfig::desk(),
            other => bail!("unknown model preset `{other}` (expected paper or desk)"),
        };
        let mut train_table = raw.train;
        let train_preset = match take_preset(&mut train_table, "train")?.as_str() {
            "paper" => TrainConfig::paper(),
            "desk" => TrainConfig::desk(),
            other => bail!("unknown train preset `{other}` (expected paper or desk)"),
        };
        let mut config = Self {
            seed: overrides.seed.unwrap_or(raw.seed),
            data: raw.data,
            skeleton: raw.skeleton,
            synth: raw.synth,
            window: raw.window,
            basis: raw.basis,
            output: raw.output,
            sample: raw.sample,
            plot: raw.plot,
            eval: raw.eval,
            model: overlay(model_preset, model_table, "model")?,
            train: overlay(train_preset, train_table, "train")?,
        };
        config.derive();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// Fields that follow from other settings.
    fn derive(&mut self) {
        self.model.joints = self.skeleton.joint_count();
        self.model.frames = self.window.total_frames;
        self.model.object_dim = self.basis.size + scenecast::data::OBJECT_TYPE_COUNT;
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.eval.realism.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let w = &self.window;
        if w.input_frames == 0 || w.input_frames >= w.total_frames {
            bail!("window needs 0 < input_frames < total_frames");
        }
        if w.train_stride == 0 || w.sample_stride == 0 {
            bail!("window strides must be positive");
        }
        if self.sample.samples == 0 {
            bail!("sample.samples must be positive");
        }
        if (self.skeleton.fps - self.synth.scene.fps).abs() > 0.0 {
            bail!("synth.scene.fps must equal skeleton.fps");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing the resolved config")
    }

    /// Writes the resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED);
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
