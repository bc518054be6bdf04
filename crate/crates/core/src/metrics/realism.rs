use std::path::Path;

use candle_core::{DType, Device, Tensor};
use ndarray::{s, Array3, ArrayView3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{pack, unpack, ArrayEntry};
use crate::data::SkeletonSpec;
use crate::nn::{AdamW, Linear, ParamStore};
use crate::normalize::fit_norm;
use crate::{rng, Error, Result};

/// Frames per classifier input.
pub const CLIP_LEN: usize = 50;
/// Start offset between consecutive scored clips.
pub const CLIP_STRIDE: usize = 5;
const HIDDEN_JOINT: usize = 32;
const HIDDEN: usize = 512;
const MANIFEST: &str = "classifier.json";
const PARAMS: &str = "classifier.bin";

/// Row-major `(n, n)` orthonormal DCT-II matrix: `X_k = Σ_i C[k][i] x_i`.
pub fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        for i in 0..n {
            m[k * n + i] = scale * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

pub fn dct(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = dct_matrix(n);
    (0..n).map(|k| (0..n).map(|i| m[k * n + i] * x[i]).sum()).collect()
}

/// Clip normalized at its first frame.
pub fn normalize_clip(clip: ArrayView3<'_, f64>, skeleton: &SkeletonSpec) -> Result<Array3<f64>> {
    Ok(fit_norm(clip, 0, skeleton)?.apply(clip))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierManifest {
    format: String,
    skeleton: SkeletonSpec,
    params: Vec<ArrayEntry>,
}

/// Per-joint DCT features through a shared layer, then two dense layers.
#[derive(Debug)]
pub struct RealismClassifier {
    store: ParamStore,
    fc1: Linear,
    fc2: Linear,
    fc3: Linear,
    dct_t: Tensor,
    skeleton: SkeletonSpec,
}

impl RealismClassifier {
    pub fn new(skeleton: &SkeletonSpec, seed: u64, trainable: bool) -> Result<Self> {
        Self::build(ParamStore::new(seed, DType::F32, trainable), skeleton)
    }

    fn build(mut store: ParamStore, skeleton: &SkeletonSpec) -> Result<Self> {
        let j = skeleton.joint_count();
        let fc1 = Linear::new(&mut store, "fc1", 3 * CLIP_LEN, HIDDEN_JOINT, true)?;
        let fc2 = Linear::new(&mut store, "fc2", j * HIDDEN_JOINT, HIDDEN, true)?;
        let fc3 = Linear::new(&mut store, "fc3", HIDDEN, 1, true)?;
        let dct_t = Tensor::from_vec(dct_matrix(CLIP_LEN), (CLIP_LEN, CLIP_LEN), &Device::Cpu)?
            .t()?
            .to_dtype(DType::F32)?;
        Ok(Self {
            store,
            fc1,
            fc2,
            fc3,
            dct_t,
            skeleton: skeleton.clone(),
        })
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    pub fn skeleton(&self) -> &SkeletonSpec {
        &self.skeleton
    }

    /// Logits for a batch of normalized clips `(B, J, 3, 50)`.
    pub fn logits(&self, clips: &Tensor) -> Result<Tensor> {
        let (b, j, _, len) = clips.dims4()?;
        if len != CLIP_LEN || j != self.skeleton.joint_count() {
            return Err(Error::Shape(format!("classifier expects (B, {}, 3, {CLIP_LEN})", self.skeleton.joint_count())));
        }
        let coeffs = clips.broadcast_matmul(&self.dct_t)?.reshape((b, j, 3 * CLIP_LEN))?;
        let h = self.fc1.forward(&coeffs)?.relu()?.reshape((b, j * HIDDEN_JOINT))?;
        let h = self.fc2.forward(&h)?.relu()?;
        Ok(self.fc3.forward(&h)?.squeeze(1)?)
    }

    fn batch(&self, clips: &[Array3<f64>]) -> Result<Tensor> {
        let j = self.skeleton.joint_count();
        let mut data = Vec::with_capacity(clips.len() * j * 3 * CLIP_LEN);
        for c in clips {
            if c.dim() != (j, 3, CLIP_LEN) {
                return Err(Error::Shape(format!("clip {:?} is not ({j}, 3, {CLIP_LEN})", c.dim())));
            }
            data.extend(normalize_clip(c.view(), &self.skeleton)?.iter().map(|v| *v as f32));
        }
        Ok(Tensor::from_vec(data, (clips.len(), j, 3, CLIP_LEN), &Device::Cpu)?)
    }

    /// Realism scores in `(0, 1)` for raw clips `(J, 3, 50)`.
    pub fn score(&self, clips: &[Array3<f64>]) -> Result<Vec<f64>> {
        if clips.is_empty() {
            return Ok(Vec::new());
        }
        let z = self.logits(&self.batch(clips)?)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(z.into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (params, bytes) = pack(&self.store.to_arrays()?);
        let manifest = ClassifierManifest {
            format: "scenecast-realism".into(),
            skeleton: self.skeleton.clone(),
            params,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(dir.join(PARAMS), bytes).map_err(|e| Error::io(dir.join(PARAMS), e))?;
        std::fs::write(dir.join(MANIFEST), json).map_err(|e| Error::io(dir.join(MANIFEST), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: ClassifierManifest = serde_json::from_slice(&text).map_err(|e| Error::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let bytes = std::fs::read(dir.join(PARAMS)).map_err(|e| Error::io(dir.join(PARAMS), e))?;
        let arrays = unpack(&m.params, &bytes, PARAMS)?;
        Self::build(ParamStore::from_arrays(arrays, DType::F32, false), &m.skeleton)
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic; ties count half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in positive {
        for n in negative {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (positive.len() * negative.len()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RealismTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of clips held out for accuracy and AUC.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for RealismTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 16,
            lr: 1e-3,
            holdout: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealismReport {
    pub train_clips: usize,
    pub holdout_clips: usize,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
}

/// Binary cross-entropy on logits, numerically stable.
fn bce_with_logits(z: &Tensor, y: &Tensor) -> Result<Tensor> {
    let softplus = (z.relu()? + (z.abs()?.neg()?.exp()? + 1.0)?.log()?)?;
    Ok((softplus - (y * z)?)?.mean_all()?)
}

/// Trains a classifier separating `real` (label 1) from `synthetic` (label 0) clips.
pub fn train_realism(
    real: &[Array3<f64>],
    synthetic: &[Array3<f64>],
    skeleton: &SkeletonSpec,
    config: &RealismTrainConfig,
) -> Result<(RealismClassifier, RealismReport)> {
    if real.is_empty() || synthetic.is_empty() {
        return Err(Error::InvalidArgument("realism training needs clips of both classes".into()));
    }
    let model = RealismClassifier::new(skeleton, config.seed, true)?;
    let mut items: Vec<(&Array3<f64>, f32)> = real
        .iter()
        .map(|c| (c, 1.0))
        .chain(synthetic.iter().map(|c| (c, 0.0)))
        .collect();
    let mut r = rng::stream(config.seed, 0x4ea1);
    items.shuffle(&mut r);
    let held = ((items.len() as f64) * config.holdout).round() as usize;
    let held = held.min(items.len() - 1);
    let (test, train) = items.split_at(held);

    let vars: Vec<_> = model.store.vars().into_iter().cloned().collect();
    let mut opt = AdamW::new(vars, 0.0)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let clips: Vec<Array3<f64>> = chunk.iter().map(|&i| train[i].0.clone()).collect();
            let labels: Vec<f32> = chunk.iter().map(|&i| train[i].1).collect();
            let y = Tensor::from_vec(labels, chunk.len(), &Device::Cpu)?;
            let loss = bce_with_logits(&model.logits(&model.batch(&clips)?)?, &y)?;
            opt.apply(&loss.backward()?, config.lr)?;
        }
    }

    let clips: Vec<Array3<f64>> = test.iter().map(|(c, _)| (*c).clone()).collect();
    let scores = model.score(&clips)?;
    let (mut pos, mut neg, mut correct) = (Vec::new(), Vec::new(), 0usize);
    for ((_, label), s) in test.iter().zip(&scores) {
        if *label > 0.5 {
            pos.push(*s);
        } else {
            neg.push(*s);
        }
        if (*s >= 0.5) == (*label > 0.5) {
            correct += 1;
        }
    }
    let report = RealismReport {
        train_clips: train.len(),
        holdout_clips: test.len(),
        accuracy: (!test.is_empty()).then(|| correct as f64 / test.len() as f64),
        auc: auc(&pos, &neg),
    };
    // Freeze: later scoring never needs gradients.
    let frozen = RealismClassifier::build(ParamStore::from_arrays(model.store.to_arrays()?, DType::F32, false), skeleton)?;
    Ok((frozen, report))
}

/// Start frames of the scored clips of the first `k` seconds of a `len`-frame sequence.
pub fn clip_starts(len: usize, k: usize, fps: usize) -> Vec<usize> {
    let limit = len.min(fps * k);
    (0..).step_by(CLIP_STRIDE).take_while(|s| s + CLIP_LEN <= limit).collect()
}

/// Mean classifier score over the clips within the first `k` seconds of `seq`.
pub fn realism_at_k(seq: ArrayView3<'_, f64>, classifier: &RealismClassifier, k: usize) -> Result<f64> {
    let fps = classifier.skeleton.fps.round() as usize;
    let starts = clip_starts(seq.shape()[2], k, fps);
    if starts.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no {CLIP_LEN}-frame clip fits in {} s of a {}-frame sequence",
            k,
            seq.shape()[2]
        )));
    }
    let clips: Vec<Array3<f64>> = starts.iter().map(|&s| seq.slice(s![.., .., s..s + CLIP_LEN]).to_owned()).collect();
    let scores = classifier.score(&clips)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dct_is_orthonormal_and_constant_has_only_dc() {
        let n = CLIP_LEN;
        let m = dct_matrix(n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| m[a * n + i] * m[b * n + i]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        let c = dct(&[0.7; CLIP_LEN]);
        assert!((c[0] - 0.7 * (n as f64).sqrt()).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn parameter_count_closed_form() {
        let m = RealismClassifier::new(&SkeletonSpec::default(), 0, false).unwrap();
        assert_eq!(m.count_params(), 151 * 32 + (17 * 32 + 1) * 512 + 513);
        assert_eq!(m.count_params(), 284_385);
    }

    #[test]
    fn scores_lie_in_open_interval() {
        let sk = SkeletonSpec::default();
        let m = RealismClassifier::new(&sk, 3, false).unwrap();
        let clip = Array3::from_shape_fn((17, 3, CLIP_LEN), |(j, d, f)| ((j + d) as f64 * 0.3 + f as f64 * 0.01).sin());
        let s = m.score(&[clip.clone(), clip.mapv(|v| v * 3.0)]).unwrap();
        assert!(s.iter().all(|v| *v > 0.0 && *v < 1.0));
        assert!(m.score(&[clip.slice(s![.., .., ..40]).to_owned()]).is_err());
    }

    #[test]
    fn auc_values() {
        assert_eq!(auc(&[0.9, 0.8], &[0.1, 0.2]), Some(1.0));
        assert_eq!(auc(&[0.5], &[0.5]), Some(0.5));
        assert_eq!(auc(&[0.1], &[0.2, 0.0]), Some(0.5));
        assert_eq!(auc(&[], &[0.2]), None);
    }

    #[test]
    fn clip_windows() {
        assert_eq!(clip_starts(50, 2, 25), vec![0]);
        assert_eq!(clip_starts(75, 10, 25), vec![0, 5, 10, 15, 20, 25]);
        assert!(clip_starts(40, 10, 25).is_empty());
    }

    #[test]
    fn realism_at_k_averages_clip_scores() {
        let sk = SkeletonSpec::default();
        let m = RealismClassifier::new(&sk, 1, false).unwrap();
        let seq = Array3::from_shape_fn((17, 3, 75), |(j, d, f)| ((j * 3 + d) as f64 * 0.2 + f as f64 * 0.03).cos());
        let single = m.score(&[seq.slice(s![.., .., ..50]).to_owned()]).unwrap()[0];
        assert_eq!(realism_at_k(seq.view(), &m, 2).unwrap(), single);
        let clips: Vec<_> = (0..6).map(|k| seq.slice(s![.., .., 5 * k..5 * k + 50]).to_owned()).collect();
        let mean = m.score(&clips).unwrap().iter().sum::<f64>() / 6.0;
        assert!((realism_at_k(seq.view(), &m, 10).unwrap() - mean).abs() < 1e-12);
        assert!(realism_at_k(seq.slice(s![.., .., ..30]), &m, 2).is_err());
    }

    #[test]
    fn single_class_is_rejected_and_save_round_trips() {
        let sk = SkeletonSpec::default();
        let clip = Array3::<f64>::zeros((17, 3, CLIP_LEN));
        assert!(train_realism(&[clip.clone()], &[], &sk, &RealismTrainConfig::default()).is_err());
        let m = RealismClassifier::new(&sk, 5, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let loaded = RealismClassifier::load(dir.path()).unwrap();
        let probe = Array3::from_shape_fn((17, 3, CLIP_LEN), |(j, d, f)| (j + d * f) as f64 * 0.01);
        assert_eq!(m.score(&[probe.clone()]).unwrap(), loaded.score(&[probe]).unwrap());
    }

    pub(crate) fn real_clips(count: usize, seed: u64) -> Vec<Array3<f64>> {
        let rec = synth_generate(
            &SynthConfig {
                persons: 3,
                objects: 6,
                duration_s: 60.0,
                ..SynthConfig::default()
            },
            seed,
        )
        .unwrap();
        let mut out = Vec::new();
        for t in &rec.persons {
            let seq = t.joints.mapv(f64::from).permuted_axes([1, 2, 0]);
            let mut s = 0;
            while s + CLIP_LEN <= seq.shape()[2] && out.len() < count {
                out.push(seq.slice(s![.., .., s..s + CLIP_LEN]).to_owned());
                s += 6;
            }
        }
        out
    }

    #[test]
    fn separates_real_from_jittered() {
        let sk = SkeletonSpec::default();
        let real = real_clips(600, 8);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut r = rng::stream(5, 5);
        let fake: Vec<_> = real_clips(600, 9).into_iter().map(|c| c.mapv(|v| v + noise.sample(&mut r))).collect();
        let (_, report) = train_realism(&real, &fake, &sk, &RealismTrainConfig::default()).unwrap();
        assert!(report.auc.unwrap() > 0.95, "{report:?}");
    }

    #[test]
    fn identical_pools_are_indistinguishable() {
        let sk = SkeletonSpec::default();
        let pool = real_clips(60, 8);
        let config = RealismTrainConfig {
            epochs: 2,
            ..RealismTrainConfig::default()
        };
        let (clf, _) = train_realism(&pool, &pool, &sk, &config).unwrap();
        let scores = clf.score(&pool).unwrap();
        let a = auc(&scores, &scores).unwrap();
        assert!((a - 0.5).abs() <= 0.05, "{a}");
    }
}
