use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "scenecast", version, about = "Scene-aware multi-person motion forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train and test recordings.
    GenData,
    /// Train a denoiser and write checkpoints plus a loss CSV.
    Train(TrainArgs),
    /// Sample forecasts for every test window.
    Sample(SampleArgs),
    /// Score forecasts against ground truth and write metrics.json.
    Evaluate(EvaluateArgs),
    /// Draw trajectory and velocity plots.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training recordings, replacing `data.train`.
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Total optimizer steps, replacing `train.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Recordings to forecast, replacing `data.test`.
    #[arg(long, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Forecasts per window, replacing `sample.samples`.
    #[arg(short = 'k', long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub zero_scene: bool,
    #[arg(long)]
    pub zero_others: bool,
    /// Cap on sampled windows, replacing `sample.max_windows`.
    #[arg(long)]
    pub max_windows: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory written by `sample`.
    #[arg(long)]
    pub forecasts: PathBuf,
    /// Trained realism classifier; trained on the fly when omitted.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// Score the ground truth in place of the forecasts.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub forecasts: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides { seed: cli.common.seed };
    let mut config = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    let out = cli.common.out;
    match cli.command {
        Command::GenData => {
            config.write_resolved(&out)?;
            commands::gen_data(&config, &out)
        }
        Command::Train(args) => {
            if !args.data.is_empty() {
                config.data.train = args.data;
            }
            if let Some(steps) = args.steps {
                config.train.steps = steps;
            }
            config.validate()?;
            config.write_resolved(&out)?;
            commands::train(&config, &out, args.resume.as_deref())
        }
        Command::Sample(args) => {
            if !args.input.is_empty() {
                config.data.test = args.input;
            }
            if let Some(k) = args.samples {
                config.sample.samples = k;
            }
            if let Some(m) = args.max_windows {
                config.sample.max_windows = m;
            }
            config.sample.ablation.zero_scene |= args.zero_scene;
            config.sample.ablation.zero_others |= args.zero_others;
            config.validate()?;
            config.write_resolved(&out)?;
            commands::sample(&config, &out, &args.checkpoint)
        }
        Command::Evaluate(args) => {
            config.write_resolved(&out)?;
            commands::evaluate(&config, &out, &args.forecasts, args.classifier.as_deref(), args.oracle)
        }
        Command::Plot(args) => {
            config.write_resolved(&out)?;
            commands::plot(&config, &out, &args.metrics, &args.forecasts)
        }
    }
}
