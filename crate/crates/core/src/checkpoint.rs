//! On-disk model container.
//!
//! A checkpoint directory holds `manifest.json` (configuration, schedule
//! hash, scaler, basis parameters and the parameter table), `params.bin`
//! with every parameter as little-endian `f32`, and optionally
//! `optimizer.bin` with the two Adam moments in the same layout.

use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bps::BasisPointSet;
use crate::data::SkeletonSpec;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{cosine_schedule, TrainConfig, Trainer};
use crate::nn::NamedArray;
use crate::normalize::MinMaxScaler;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.bin";
pub const OPTIMIZER: &str = "optimizer.bin";
const FORMAT: &str = "scenecast-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub seed: u64,
    pub size: usize,
    pub radius: f64,
}

impl Default for BasisSpec {
    /// 2048 points in a 1.5 m ball.
    fn default() -> Self {
        Self { seed: 0, size: 2048, radius: 1.5 }
    }
}

impl BasisSpec {
    pub fn build(&self) -> Result<BasisPointSet> {
        BasisPointSet::generate(self.seed, self.size, self.radius)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in `f32` elements.
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    denoiser: DenoiserConfig,
    skeleton: SkeletonSpec,
    input_frames: usize,
    scaler: MinMaxScaler,
    basis: BasisSpec,
    schedule_hash: String,
    train: Option<TrainConfig>,
    step: usize,
    params: Vec<ArrayEntry>,
    /// Names of the variables whose moments are in `optimizer.bin`, in order.
    optimizer: Option<Vec<ArrayEntry>>,
}

/// Everything needed to sample from, evaluate or keep training a model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub denoiser: DenoiserConfig,
    pub skeleton: SkeletonSpec,
    pub input_frames: usize,
    pub scaler: MinMaxScaler,
    pub basis: BasisSpec,
    pub train: Option<TrainConfig>,
    pub step: usize,
    /// Parameters followed by fixed buffers.
    pub params: Vec<NamedArray>,
    /// First and second Adam moments, one array per trainable parameter.
    pub moments: Option<(Vec<NamedArray>, Vec<NamedArray>)>,
}

fn tensor_array(name: &str, t: &Tensor) -> Result<NamedArray> {
    Ok(NamedArray {
        name: name.to_string(),
        shape: t.dims().to_vec(),
        values: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
    })
}

pub(crate) fn pack(arrays: &[NamedArray]) -> (Vec<ArrayEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for a in arrays {
        entries.push(ArrayEntry {
            name: a.name.clone(),
            shape: a.shape.clone(),
            offset,
        });
        offset += a.values.len();
        for v in &a.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (entries, bytes)
}

pub(crate) fn unpack(entries: &[ArrayEntry], bytes: &[u8], file: &str) -> Result<Vec<NamedArray>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!("{file} length is not a multiple of 4")));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let total: usize = entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if total != values.len() {
        return Err(Error::Shape(format!(
            "{file} holds {} values, manifest describes {total}",
            values.len()
        )));
    }
    let mut expected = 0;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let len: usize = e.shape.iter().product();
        if e.offset != expected || e.offset + len > values.len() {
            return Err(Error::Checkpoint(format!("{file}: entry {} out of place", e.name)));
        }
        out.push(NamedArray {
            name: e.name.clone(),
            shape: e.shape.clone(),
            values: values[e.offset..e.offset + len].to_vec(),
        });
        expected += len;
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Checkpoint {
    /// Snapshot of a trainer, including optimizer moments for resuming.
    pub fn from_trainer(
        trainer: &Trainer,
        skeleton: &SkeletonSpec,
        input_frames: usize,
        scaler: &MinMaxScaler,
        basis: &BasisPointSet,
    ) -> Result<Self> {
        let store = trainer.model.store();
        let names: Vec<&str> = store
            .params()
            .iter()
            .filter(|p| p.var.is_some())
            .map(|p| p.name.as_str())
            .collect();
        let (first, second) = trainer.optimizer.moments();
        let first = names.iter().zip(first).map(|(n, t)| tensor_array(n, t)).collect::<Result<_>>()?;
        let second = names.iter().zip(second).map(|(n, t)| tensor_array(n, t)).collect::<Result<_>>()?;
        Ok(Self {
            denoiser: trainer.model.config().clone(),
            skeleton: skeleton.clone(),
            input_frames,
            scaler: scaler.clone(),
            basis: BasisSpec {
                seed: basis.seed,
                size: basis.len(),
                radius: basis.radius,
            },
            train: Some(trainer.config.clone()),
            step: trainer.step(),
            params: store.to_arrays()?,
            moments: Some((first, second)),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (params, param_bytes) = pack(&self.params);
        let optimizer = match &self.moments {
            Some((first, second)) => {
                let mut all = first.clone();
                all.extend(second.iter().cloned());
                let (entries, bytes) = pack(&all);
                write(&dir.join(OPTIMIZER), &bytes)?;
                Some(entries[..first.len()].to_vec())
            }
            None => None,
        };
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            denoiser: self.denoiser.clone(),
            skeleton: self.skeleton.clone(),
            input_frames: self.input_frames,
            scaler: self.scaler.clone(),
            basis: self.basis,
            schedule_hash: cosine_schedule(self.denoiser.diffusion_steps)?.hash(),
            train: self.train.clone(),
            step: self.step,
            params,
            optimizer,
        };
        let mut json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Checkpoint(format!("cannot serialize manifest: {e}")))?;
        json.push('\n');
        write(&dir.join(PARAMS), &param_bytes)?;
        write(&dir.join(MANIFEST), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text = read(&manifest_path)?;
        let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Manifest {
            path: manifest_path.clone(),
            reason: e.to_string(),
        })?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Manifest {
                path: manifest_path,
                reason: format!("unsupported format {} v{}", manifest.format, manifest.version),
            });
        }
        manifest.denoiser.validate()?;
        let schedule = cosine_schedule(manifest.denoiser.diffusion_steps)?;
        if schedule.hash() != manifest.schedule_hash {
            return Err(Error::Checkpoint("schedule hash does not match the configured schedule".into()));
        }
        let joints = manifest.skeleton.joint_count();
        if manifest.scaler.joints != joints
            || manifest.scaler.min.len() != joints * 3
            || manifest.scaler.max.len() != joints * 3
            || manifest.denoiser.joints != joints
        {
            return Err(Error::Checkpoint("scaler or model does not match the skeleton".into()));
        }
        if manifest.basis.size + crate::data::OBJECT_TYPE_COUNT != manifest.denoiser.object_dim {
            return Err(Error::Checkpoint("basis size does not match the model's object width".into()));
        }
        let params = unpack(&manifest.params, &read(&dir.join(PARAMS))?, PARAMS)?;
        let moments = match &manifest.optimizer {
            Some(entries) => {
                let bytes = read(&dir.join(OPTIMIZER))?;
                let half = bytes.len() / 2;
                let first = unpack(entries, &bytes[..half], OPTIMIZER)?;
                let second = unpack(entries, &bytes[half..], OPTIMIZER)?;
                Some((first, second))
            }
            None => None,
        };
        Ok(Self {
            denoiser: manifest.denoiser,
            skeleton: manifest.skeleton,
            input_frames: manifest.input_frames,
            scaler: manifest.scaler,
            basis: manifest.basis,
            train: manifest.train,
            step: manifest.step,
            params,
            moments,
        })
    }

    /// Hex SHA-256 of the manifest and parameter files of a saved checkpoint.
    pub fn file_hash(dir: &Path) -> Result<String> {
        let mut h = Sha256::new();
        h.update(read(&dir.join(MANIFEST))?);
        h.update(read(&dir.join(PARAMS))?);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn model(&self, dtype: DType, trainable: bool) -> Result<Denoiser> {
        Denoiser::from_arrays(self.denoiser.clone(), self.params.clone(), dtype, trainable)
    }

    /// Trainer continuing from the saved step with the saved moments.
    pub fn resume(&self, config: TrainConfig) -> Result<Trainer> {
        let model = self.model(DType::F32, true)?;
        let mut trainer = Trainer::new(model, config)?;
        let Some((first, second)) = &self.moments else {
            return Err(Error::Checkpoint("checkpoint has no optimizer state".into()));
        };
        let to_tensors = |arrays: &[NamedArray]| -> Result<Vec<Tensor>> {
            arrays
                .iter()
                .map(|a| {
                    Ok(Tensor::from_vec(a.values.clone(), a.shape.as_slice(), trainer.model.device())?
                        .to_dtype(trainer.model.dtype())?)
                })
                .collect()
        };
        let (first, second) = (to_tensors(first)?, to_tensors(second)?);
        trainer.optimizer.restore(self.step, first, second)?;
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::train::{prepare_training_set, TrainingSet};
    use crate::data::{make_windows, synth_generate, SynthConfig};

    fn setup() -> (TrainingSet, DenoiserConfig, BasisPointSet, SkeletonSpec) {
        let rec = synth_generate(
            &SynthConfig {
                persons: 2,
                objects: 5,
                duration_s: 3.0,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let windows = make_windows(&rec, 6, 16, 16).unwrap();
        let basis = BasisPointSet::generate(2, 8, 4.0).unwrap();
        let set = prepare_training_set(&windows, &basis, &rec.skeleton, None).unwrap();
        let cfg = DenoiserConfig::tiny(rec.skeleton.joint_count(), 16, basis.encoding_dim());
        (set, cfg, basis, rec.skeleton)
    }

    fn config() -> TrainConfig {
        TrainConfig {
            steps: 4,
            batch_size: 2,
            lr_start: 1e-4,
            lr_end: 1e-3,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn save_load_resume_matches_uninterrupted_run() {
        let (set, cfg, basis, skeleton) = setup();
        let mut straight = Trainer::new(Denoiser::new(cfg.clone(), DType::F32, true).unwrap(), config()).unwrap();
        straight.run(&set, |_, _| Ok(())).unwrap();

        let mut first = Trainer::new(Denoiser::new(cfg, DType::F32, true).unwrap(), config()).unwrap();
        first.train_step(&set).unwrap();
        first.train_step(&set).unwrap();
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::from_trainer(&first, &skeleton, 6, &set.scaler, &basis)
            .unwrap()
            .save(dir.path())
            .unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.step, 2);
        assert_eq!(loaded.scaler, set.scaler);
        assert_eq!(loaded.basis.build().unwrap(), basis);
        let mut second = loaded.resume(config()).unwrap();
        second.run(&set, |_, _| Ok(())).unwrap();
        let joined: Vec<_> = first.history.iter().chain(&second.history).copied().collect();
        assert_eq!(joined, straight.history);
        assert_eq!(
            second.model.store().to_arrays().unwrap(),
            straight.model.store().to_arrays().unwrap()
        );
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let (set, cfg, basis, skeleton) = setup();
        let trainer = Trainer::new(Denoiser::new(cfg, DType::F32, true).unwrap(), config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::from_trainer(&trainer, &skeleton, 6, &set.scaler, &basis).unwrap();
        ckpt.save(dir.path()).unwrap();
        let hash = Checkpoint::file_hash(dir.path()).unwrap();
        assert_eq!(hash, Checkpoint::file_hash(dir.path()).unwrap());

        let params = dir.path().join(PARAMS);
        let mut bytes = std::fs::read(&params).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&params, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Shape(_))));

        ckpt.save(dir.path()).unwrap();
        let manifest = dir.path().join(MANIFEST);
        let text = std::fs::read_to_string(&manifest).unwrap();
        let hash_line = text.lines().find(|l| l.contains("schedule_hash")).unwrap().to_string();
        std::fs::write(&manifest, text.replace(&hash_line, "  \"schedule_hash\": \"00\",")).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));

        std::fs::write(&manifest, "{").unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Manifest { .. })));
        std::fs::remove_file(&manifest).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Io { .. })));
    }
}
