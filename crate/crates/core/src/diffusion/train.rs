//! Denoiser training: dataset preparation and the optimization loop.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use ndarray::{s, Array2, Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cosine_schedule, loss_weights, q_sample, training_loss, DiffusionSchedule};
use crate::bps::BasisPointSet;
use crate::data::{MultiPersonWindow, SkeletonSpec};
use crate::denoiser::{Ablation, Conditioning, Denoiser, DenoiserInput};
use crate::nn::AdamW;
use crate::normalize::{build_datapoint, MinMaxScaler};
use crate::{rng, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Learning rate at the first step, rising linearly to `lr_end`.
    pub lr_start: f64,
    pub lr_end: f64,
    pub weight_decay: f64,
    /// Share of standing windows dropped before training.
    pub undersample_fraction: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            steps: 680_000,
            batch_size: 32,
            lr_start: 2e-7,
            lr_end: 5e-5,
            weight_decay: 0.01,
            undersample_fraction: 0.5,
            grad_clip: None,
            ablation: Ablation::default(),
            seed: 0,
        }
    }

    /// Short schedule for the small model; the higher peak rate compensates
    /// for the 34× fewer steps.
    pub fn desk() -> Self {
        Self {
            steps: 20_000,
            batch_size: 8,
            lr_end: 5e-4,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("steps and batch_size must be positive".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_start <= self.lr_end && self.lr_end.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rates must satisfy 0 < lr_start <= lr_end, got {} and {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(0.0..=1.0).contains(&self.undersample_fraction) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "undersample_fraction must be in [0, 1] and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate used at zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr_end;
        }
        let f = step.min(self.steps - 1) as f64 / (self.steps - 1) as f64;
        self.lr_start + (self.lr_end - self.lr_start) * f
    }
}

/// Row-major `(J·3, N)` copy of a `(J, 3, N)` sequence.
pub fn flatten(seq: ArrayView3<'_, f64>) -> Vec<f64> {
    seq.iter().copied().collect()
}

/// Input frames kept, every later frame replaced by the last input frame.
pub fn hold_input(seq: ArrayView3<'_, f64>, input_len: usize) -> Array3<f64> {
    let mut out = seq.to_owned();
    let last = seq.slice(s![.., .., input_len - 1]).to_owned();
    for f in input_len..seq.shape()[2] {
        out.slice_mut(s![.., .., f]).assign(&last);
    }
    out
}

/// One normalized, scaled training example.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub x: Vec<f64>,
    pub x_input: Vec<f64>,
    pub others: Vec<Vec<f64>>,
    pub scene: Array2<f64>,
    pub presence: Vec<bool>,
    pub input_len: usize,
}

impl TrainingSample {
    pub fn conditioning(&self) -> Conditioning<'_> {
        Conditioning {
            x_input: &self.x_input,
            others: &self.others,
            scene: self.scene.view(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    pub scaler: MinMaxScaler,
}

/// Builds one datapoint per person and window. Persons without any real
/// output frame are skipped. The scaler is fitted on the primary sequences
/// unless one is given.
pub fn prepare_training_set(
    windows: &[MultiPersonWindow],
    basis: &BasisPointSet,
    skeleton: &SkeletonSpec,
    scaler: Option<MinMaxScaler>,
) -> Result<TrainingSet> {
    let mut points = Vec::new();
    for w in windows {
        for i in 0..w.person_count() {
            let live = w.presence.row(i).iter().skip(w.input_len).any(|p| *p);
            if live {
                points.push(build_datapoint(w, i, basis, skeleton)?);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("no training datapoints with live output frames".into()));
    }
    let scaler = match scaler {
        Some(s) => s,
        None => MinMaxScaler::fit(points.iter().map(|d| d.x.view()))?,
    };
    let samples = points
        .into_iter()
        .map(|d| TrainingSample {
            x: flatten(scaler.scale(d.x.view()).view()),
            x_input: flatten(scaler.scale(hold_input(d.x.view(), d.input_len).view()).view()),
            others: d
                .others
                .outer_iter()
                .map(|o| flatten(scaler.scale(o).view()))
                .collect(),
            scene: d.scene,
            presence: d.presence,
            input_len: d.input_len,
        })
        .collect();
    Ok(TrainingSet { samples, scaler })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// One-based optimizer step.
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_loss_csv(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut body = String::from("step,loss,lr\n");
    for r in history {
        body.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}

/// Resumable training state: the per-step randomness depends only on the
/// seed and the step number.
#[derive(Debug)]
pub struct Trainer {
    pub model: Denoiser,
    pub optimizer: AdamW,
    pub schedule: DiffusionSchedule,
    pub config: TrainConfig,
    pub history: Vec<LossRecord>,
}

impl Trainer {
    pub fn new(mut model: Denoiser, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let vars: Vec<_> = model.store().vars().into_iter().cloned().collect();
        if vars.is_empty() {
            return Err(Error::InvalidArgument("model was built without trainable parameters".into()));
        }
        model.set_ablation(config.ablation);
        let schedule = cosine_schedule(model.config().diffusion_steps)?;
        Ok(Self {
            optimizer: AdamW::new(vars, config.weight_decay)?,
            model,
            schedule,
            config,
            history: Vec::new(),
        })
    }

    /// Number of optimizer steps taken so far.
    pub fn step(&self) -> usize {
        self.optimizer.step
    }

    /// Batch, timesteps and noise drawn for zero-based `step`.
    fn draw(&self, step: usize, set: &TrainingSet) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut r = rng::stream(self.config.seed, rng::mix(0x7ea1, step as u64));
        let b = self.config.batch_size;
        let idx: Vec<usize> = (0..b).map(|_| r.gen_range(0..set.samples.len())).collect();
        let t: Vec<usize> = (0..b).map(|_| r.gen_range(1..=self.schedule.steps)).collect();
        let cfg = self.model.config();
        let noise = rng::normal_vec(&mut r, b * cfg.channels() * cfg.frames);
        (idx, t, noise)
    }

    /// One optimizer step; returns its record.
    pub fn train_step(&mut self, set: &TrainingSet) -> Result<LossRecord> {
        let step = self.optimizer.step;
        let (idx, t, noise) = self.draw(step, set);
        let cfg = self.model.config();
        let shape = (idx.len(), cfg.channels(), cfg.frames);
        let dev = self.model.device().clone();
        let dtype = self.model.dtype();
        let batch: Vec<&TrainingSample> = idx.iter().map(|&i| &set.samples[i]).collect();
        let x0: Vec<f64> = batch.iter().flat_map(|s| s.x.iter().copied()).collect();
        let x0 = Tensor::from_vec(x0, shape, &dev)?.to_dtype(dtype)?;
        let eps = Tensor::from_vec(noise, shape, &dev)?.to_dtype(dtype)?;
        let x_t = q_sample(&x0, &t, &eps, &self.schedule)?;
        let conds: Vec<_> = batch.iter().map(|s| s.conditioning()).collect();
        let input = DenoiserInput::assemble(&self.model, &conds, x_t, t.clone())?;
        let presence: Vec<Vec<bool>> = batch.iter().map(|s| s.presence.clone()).collect();
        let lens: Vec<usize> = batch.iter().map(|s| s.input_len).collect();
        let weights = loss_weights(&presence, &lens, dtype, &dev)?;
        let loss = training_loss(&self.model.denoise(&input)?, &x0, &weights)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        let lr = self.config.lr_at(step);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {value} at step {} (lr {lr}, timesteps {t:?}, samples {idx:?})",
                step + 1
            )));
        }
        let mut grads = loss.backward()?;
        if let Some(max_norm) = self.config.grad_clip {
            clip_gradients(&mut grads, &self.model, max_norm)?;
        }
        self.optimizer.apply(&grads, lr)?;
        let record = LossRecord {
            step: step + 1,
            loss: value,
            lr,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Runs until `config.steps` steps have been taken; `on_step` sees every record.
    pub fn run(&mut self, set: &TrainingSet, mut on_step: impl FnMut(&Trainer, &LossRecord) -> Result<()>) -> Result<()> {
        while self.step() < self.config.steps {
            let record = self.train_step(set)?;
            on_step(self, &record)?;
        }
        Ok(())
    }
}

fn clip_gradients(grads: &mut candle_core::backprop::GradStore, model: &Denoiser, max_norm: f64) -> Result<()> {
    let vars = model.store().vars();
    let mut total = 0.0;
    for v in &vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            total += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for v in &vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * factor)?);
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub history: Vec<LossRecord>,
}

/// Trains `model` on `set` from scratch for `config.steps` steps.
pub fn train(model: Denoiser, set: &TrainingSet, config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.run(set, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        model: trainer.model,
        history: trainer.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, synth_generate, SynthConfig};
    use crate::denoiser::DenoiserConfig;

    fn tiny_set() -> (TrainingSet, DenoiserConfig) {
        let rec = synth_generate(
            &SynthConfig {
                persons: 2,
                objects: 5,
                duration_s: 4.0,
                ..SynthConfig::default()
            },
            3,
        )
        .unwrap();
        let windows = make_windows(&rec, 6, 16, 20).unwrap();
        let basis = BasisPointSet::generate(0, 8, 4.0).unwrap();
        let set = prepare_training_set(&windows, &basis, &rec.skeleton, None).unwrap();
        let cfg = DenoiserConfig::tiny(rec.skeleton.joint_count(), 16, basis.encoding_dim());
        (set, cfg)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 6,
            batch_size: 3,
            lr_start: 1e-4,
            lr_end: 1e-3,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn lr_is_linear_between_endpoints() {
        let c = TrainConfig::paper();
        assert_eq!(c.lr_at(0), 2e-7);
        assert!((c.lr_at(c.steps - 1) - 5e-5).abs() < 1e-18);
        let mid = c.lr_at((c.steps - 1) / 2);
        assert!((mid - (2e-7 + 5e-5) / 2.0).abs() < 1e-10);
        assert!(TrainConfig { lr_start: 1.0, lr_end: 0.5, ..c }.validate().is_err());
    }

    #[test]
    fn hold_input_repeats_last_input_frame() {
        let seq = Array3::from_shape_fn((1, 3, 5), |(_, d, f)| (d * 10 + f) as f64);
        let held = hold_input(seq.view(), 2);
        assert_eq!(held.slice(s![0, 0, ..]).to_vec(), vec![0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(held.slice(s![0, 2, ..]).to_vec(), vec![20.0, 21.0, 21.0, 21.0, 21.0]);
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (set, cfg) = tiny_set();
        assert!(!set.samples.is_empty());
        let run = || {
            let model = Denoiser::new(cfg.clone(), DType::F32, true).unwrap();
            train(model, &set, quick()).unwrap().history
        };
        let a = run();
        assert_eq!(a.len(), 6);
        assert_eq!(a, run());
        assert!(a.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));

        // Split run: 3 steps, copy weights and moments into a new trainer, 3 more.
        let model = Denoiser::new(cfg.clone(), DType::F32, true).unwrap();
        let mut first = Trainer::new(model, quick()).unwrap();
        for _ in 0..3 {
            first.train_step(&set).unwrap();
        }
        let arrays = first.model.store().to_arrays().unwrap();
        let (m1, m2) = first.optimizer.moments();
        let (m1, m2) = (m1.to_vec(), m2.to_vec());
        let model = Denoiser::from_arrays(cfg, arrays, DType::F32, true).unwrap();
        let mut second = Trainer::new(model, quick()).unwrap();
        second.optimizer.restore(3, m1, m2).unwrap();
        second.run(&set, |_, _| Ok(())).unwrap();
        let resumed: Vec<_> = first.history.iter().chain(&second.history).copied().collect();
        assert_eq!(resumed, a);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_csv(&path, &[LossRecord { step: 1, loss: 0.5, lr: 1e-4 }]).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "step,loss,lr\n1,0.5,0.0001\n");
    }
}
