use std::collections::BTreeMap;

use ndarray::{s, Array3, ArrayView3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::motion::{chi, ndms_score, umwr_at};
use super::realism::{train_realism, RealismClassifier, RealismReport, RealismTrainConfig, CLIP_LEN};
use super::refset::{ReferenceSet, SNIPPET_LEN};
use super::trajectory::{root_trajectory, trajectory_length, velocity_curve, wasserstein1, VELOCITY_CLIP};
use crate::data::{MultiPersonWindow, SkeletonSpec};
use crate::{rng, Error, Result};

/// Ground truth window paired with its `K` sampled forecasts `(P, J, 3, N)`.
#[derive(Clone, Copy, Debug)]
pub struct EvalItem<'a> {
    pub window: &'a MultiPersonWindow,
    pub samples: &'a [ndarray::Array4<f64>],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Seconds at which UMWR and realism are reported.
    pub horizons: Vec<usize>,
    pub realism: RealismTrainConfig,
    /// Per-joint std of the jitter applied to real clips used as negatives, meters.
    pub jitter: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![2, 4, 6, 8, 10],
            realism: RealismTrainConfig::default(),
            jitter: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub mean: f64,
    pub std: f64,
    /// Wasserstein-1 distance to the ground-truth distribution.
    pub w1: f64,
    pub gt_mean: f64,
    pub gt_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ndms: f64,
    /// `umwr@ks` and `realism@ks`; null where the forecast is too short.
    #[serde(flatten)]
    pub horizons: BTreeMap<String, Option<f64>>,
    pub trajectory: TrajectoryReport,
    pub velocity_curve: Vec<f64>,
    pub gt_velocity_curve: Vec<f64>,
    pub sequences: usize,
    pub reference_words: usize,
    /// Present when the classifier was trained during this evaluation.
    pub realism_training: Option<RealismReport>,
}

struct Person<'a> {
    item: usize,
    input_len: usize,
    gt: ArrayView3<'a, f64>,
    predictions: Vec<ArrayView3<'a, f64>>,
}

fn persons<'a>(items: &[EvalItem<'a>]) -> Result<Vec<Person<'a>>> {
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let w = item.window;
        for sample in item.samples {
            if sample.shape() != w.positions.shape() {
                return Err(Error::Shape(format!(
                    "forecast {:?} does not match window {:?}",
                    sample.shape(),
                    w.positions.shape()
                )));
            }
        }
        for p in 0..w.person_count() {
            if !w.presence.row(p).iter().all(|v| *v) {
                continue;
            }
            out.push(Person {
                item: i,
                input_len: w.input_len,
                gt: w.positions.slice(s![p, .., .., ..]),
                predictions: item.samples.iter().map(|x| x.slice(s![p, .., .., ..])).collect(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no person is present throughout any evaluated window".into()));
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn mean_of(values: Vec<f64>) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn clips(seq: ArrayView3<'_, f64>, stride: usize) -> Vec<Array3<f64>> {
    let len = seq.shape()[2];
    (0..)
        .step_by(stride)
        .take_while(|s| s + CLIP_LEN <= len)
        .map(|s| seq.slice(s![.., .., s..s + CLIP_LEN]).to_owned())
        .collect()
}

/// Real clips against jittered real clips and forecasts from even-indexed
/// windows; the remaining windows are left for scoring. `None` when the
/// windows are too short for a single clip.
fn fit_classifier(
    people: &[Person<'_>],
    skeleton: &SkeletonSpec,
    config: &EvalConfig,
) -> Result<Option<(RealismClassifier, RealismReport, bool)>> {
    let split = people.iter().any(|p| p.item % 2 == 1) && people.iter().any(|p| p.item % 2 == 0);
    let train: Vec<&Person<'_>> = people.iter().filter(|p| !split || p.item % 2 == 0).collect();
    let stride = CLIP_LEN / 5;
    let mut real = Vec::new();
    let mut synthetic = Vec::new();
    let noise = Normal::new(0.0, config.jitter).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut r = rng::stream(config.realism.seed, 0x717e);
    for p in &train {
        for c in clips(p.gt, stride) {
            synthetic.push(c.mapv(|v| v + noise.sample(&mut r)));
            real.push(c);
        }
        for pred in &p.predictions {
            synthetic.extend(clips(pred.slice(s![.., .., p.input_len..]), stride));
        }
    }
    if real.is_empty() {
        return Ok(None);
    }
    let (clf, report) = train_realism(&real, &synthetic, skeleton, &config.realism)?;
    Ok(Some((clf, report, split)))
}

/// Motion words of every ground-truth person present throughout its window.
pub fn reference_set(items: &[EvalItem<'_>], skeleton: &SkeletonSpec) -> Result<ReferenceSet> {
    let people = persons(items)?;
    ReferenceSet::build(people.iter().map(|p| p.gt), SNIPPET_LEN, skeleton, "evaluated ground truth")
}

/// Scores forecasts against their ground truth windows. Without a
/// classifier one is trained on the fly and realism is reported on
/// held-out windows only.
pub fn evaluate(
    items: &[EvalItem<'_>],
    skeleton: &SkeletonSpec,
    classifier: Option<&RealismClassifier>,
    config: &EvalConfig,
) -> Result<(MetricReport, Option<RealismClassifier>)> {
    let people = persons(items)?;
    let refset = reference_set(items, skeleton)?;
    let fps = skeleton.fps.round() as usize;

    let mut ndms = Vec::new();
    let mut pred_lengths = Vec::new();
    let mut gt_lengths = Vec::new();
    for p in &people {
        let n = p.input_len;
        gt_lengths.push(trajectory_length(root_trajectory(p.gt, skeleton).view(), n)?);
        for pred in &p.predictions {
            ndms.push(ndms_score(pred.slice(s![.., .., n..]), pred.slice(s![.., .., ..n]), &refset, skeleton)?);
            pred_lengths.push(trajectory_length(root_trajectory(*pred, skeleton).view(), n)?);
        }
    }
    if pred_lengths.is_empty() {
        return Err(Error::InvalidArgument("no forecasts to evaluate".into()));
    }

    let mut horizons = BTreeMap::new();
    for &k in &config.horizons {
        let mut values = Vec::new();
        for p in &people {
            for pred in &p.predictions {
                let x = chi(pred.slice(s![.., .., ..p.input_len]), pred.slice(s![.., .., p.input_len..]), SNIPPET_LEN)?;
                match umwr_at(x.view(), k, fps, &refset, skeleton) {
                    Ok(v) => values.push(v),
                    Err(Error::InvalidArgument(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        horizons.insert(format!("umwr@{k}s"), mean_of(values));
    }

    let mut trained = None;
    let (realism_training, held_out_only) = match classifier {
        Some(_) => (None, false),
        None => match fit_classifier(&people, skeleton, config)? {
            Some((c, report, split)) => {
                trained = Some(c);
                (Some(report), split)
            }
            None => (None, false),
        },
    };
    let clf = classifier.or(trained.as_ref());
    for &k in &config.horizons {
        let mut values = Vec::new();
        let Some(clf) = clf else {
            horizons.insert(format!("realism@{k}s"), None);
            continue;
        };
        for p in people.iter().filter(|p| !held_out_only || p.item % 2 == 1) {
            if p.gt.shape()[2] - p.input_len < fps * k {
                continue;
            }
            for pred in &p.predictions {
                match super::realism::realism_at_k(pred.slice(s![.., .., p.input_len..]), clf, k) {
                    Ok(v) => values.push(v),
                    Err(Error::InvalidArgument(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        horizons.insert(format!("realism@{k}s"), mean_of(values));
    }

    let (mean, std) = mean_std(&pred_lengths);
    let (gt_mean, gt_std) = mean_std(&gt_lengths);
    let from = people[0].input_len;
    let preds: Vec<ArrayView3<'_, f64>> = people.iter().flat_map(|p| p.predictions.iter().copied()).collect();
    let report = MetricReport {
        ndms: ndms.iter().sum::<f64>() / ndms.len() as f64,
        horizons,
        trajectory: TrajectoryReport {
            mean,
            std,
            w1: wasserstein1(&pred_lengths, &gt_lengths)?,
            gt_mean,
            gt_std,
        },
        velocity_curve: velocity_curve(preds, from, skeleton, VELOCITY_CLIP)?,
        gt_velocity_curve: velocity_curve(people.iter().map(|p| p.gt), from, skeleton, VELOCITY_CLIP)?,
        sequences: pred_lengths.len(),
        reference_words: refset.len(),
        realism_training,
    };
    Ok((report, trained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, synth_generate, SynthConfig};

    fn windows() -> (Vec<MultiPersonWindow>, SkeletonSpec) {
        let rec = synth_generate(
            &SynthConfig {
                persons: 2,
                objects: 6,
                duration_s: 30.0,
                partial_presence: 0.0,
                ..SynthConfig::default()
            },
            4,
        )
        .unwrap();
        let w = make_windows(&rec, 25, 75, 100).unwrap();
        (w, rec.skeleton.clone())
    }

    #[test]
    fn ground_truth_as_forecast_is_a_perfect_match() {
        let (w, sk) = windows();
        let samples: Vec<_> = w.iter().map(|w| vec![w.positions.clone()]).collect();
        let items: Vec<_> = w.iter().zip(&samples).map(|(w, s)| EvalItem { window: w, samples: s }).collect();
        let clf = RealismClassifier::new(&sk, 0, false).unwrap();
        let (report, trained) = evaluate(&items, &sk, Some(&clf), &EvalConfig::default()).unwrap();
        assert!(trained.is_none());
        assert!((report.ndms - 1.0).abs() < 1e-12);
        assert_eq!(report.trajectory.w1, 0.0);
        assert_eq!(report.velocity_curve, report.gt_velocity_curve);
        assert!(report.horizons["umwr@2s"].is_some());
        assert_eq!(report.horizons["umwr@4s"], None);
        assert!(report.horizons["realism@2s"].is_some());
        assert_eq!(report.horizons["realism@4s"], None);
        let json = serde_json::to_value(&report).unwrap();
        assert!(json.get("umwr@2s").is_some() && json["trajectory"].get("w1").is_some());
    }

    #[test]
    fn windows_shorter_than_a_clip_skip_realism() {
        let rec = synth_generate(&SynthConfig { persons: 2, objects: 5, duration_s: 6.0, partial_presence: 0.0, ..SynthConfig::default() }, 1).unwrap();
        let w = make_windows(&rec, 10, 40, 40).unwrap();
        let samples: Vec<_> = w.iter().map(|w| vec![w.positions.clone()]).collect();
        let items: Vec<_> = w.iter().zip(&samples).map(|(w, s)| EvalItem { window: w, samples: s }).collect();
        let config = EvalConfig { horizons: vec![1], ..EvalConfig::default() };
        let (report, trained) = evaluate(&items, &rec.skeleton, None, &config).unwrap();
        assert!(trained.is_none() && report.realism_training.is_none());
        assert_eq!(report.horizons["realism@1s"], None);
        assert!(report.horizons["umwr@1s"].is_some());
    }

    #[test]
    fn frozen_forecast_shortens_trajectories_and_trains_a_classifier() {
        let (w, sk) = windows();
        let samples: Vec<_> = w
            .iter()
            .map(|w| {
                let mut x = w.positions.clone();
                let n = w.input_len;
                for f in n..x.shape()[3] {
                    let last = x.slice(s![.., .., .., n - 1]).to_owned();
                    x.slice_mut(s![.., .., .., f]).assign(&last);
                }
                vec![x]
            })
            .collect();
        let items: Vec<_> = w.iter().zip(&samples).map(|(w, s)| EvalItem { window: w, samples: s }).collect();
        let (report, trained) = evaluate(&items, &sk, None, &EvalConfig::default()).unwrap();
        assert!(trained.is_some());
        assert_eq!(report.trajectory.mean, 0.0);
        assert!(report.trajectory.w1 > 0.0);
        assert!(report.velocity_curve.iter().all(|v| *v == 0.0));
        assert!(report.realism_training.is_some());
    }

    #[test]
    fn mismatched_forecast_shape_is_rejected() {
        let (w, sk) = windows();
        let bad = vec![w[0].positions.slice(s![.., .., .., ..50]).to_owned()];
        let items = [EvalItem { window: &w[0], samples: &bad }];
        assert!(matches!(evaluate(&items, &sk, None, &EvalConfig::default()), Err(Error::Shape(_))));
    }
}
