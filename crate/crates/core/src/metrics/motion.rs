use std::collections::BTreeSet;

use ndarray::{concatenate, s, Array3, ArrayView3, Axis};

use super::refset::{normalize_snippet, ReferenceSet};
use crate::data::SkeletonSpec;
use crate::{Error, Result};

/// Input frames prepended to a prediction before NDMS windows are cut.
pub const NDMS_PREFIX: usize = 8;

/// Score of one joint's velocity pair: direction agreement times magnitude ratio.
pub fn velocity_score(v: [f64; 3], w: [f64; 3]) -> f64 {
    if v == w {
        return 1.0;
    }
    let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let nw = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    match (nv == 0.0, nw == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let cos = ((v[0] * w[0] + v[1] * w[1] + v[2] * w[2]) / (nv * nw)).clamp(-1.0, 1.0);
            (1.0 + cos) / 2.0 * (nv.min(nw) / nv.max(nw))
        }
    }
}

/// Mean over frames and joints of [`velocity_score`] between two flattened
/// `(J, 3, κ)` snippets.
pub fn snippet_score(a: &[f64], b: &[f64], joints: usize, kappa: usize) -> f64 {
    let at = |x: &[f64], j: usize, d: usize, f: usize| x[(j * 3 + d) * kappa + f];
    let mut total = 0.0;
    for f in 0..kappa - 1 {
        for j in 0..joints {
            let vel = |x: &[f64]| {
                [0, 1, 2].map(|d| at(x, j, d, f + 1) - at(x, j, d, f))
            };
            total += velocity_score(vel(a), vel(b));
        }
    }
    total / ((kappa - 1) * joints) as f64
}

fn check(seq: ArrayView3<'_, f64>, refset: &ReferenceSet) -> Result<()> {
    if seq.shape()[0] != refset.joints || seq.shape()[1] != 3 {
        return Err(Error::Shape(format!("sequence {:?} does not match the reference set", seq.shape())));
    }
    if seq.shape()[2] < refset.kappa {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} frames is shorter than the snippet length {}",
            seq.shape()[2],
            refset.kappa
        )));
    }
    Ok(())
}

/// Nearest word index for every `κ`-window of `seq`.
pub fn nearest_words(seq: ArrayView3<'_, f64>, refset: &ReferenceSet, skeleton: &SkeletonSpec) -> Result<Vec<usize>> {
    check(seq, refset)?;
    let k = refset.kappa;
    (0..=seq.shape()[2] - k)
        .map(|s| Ok(refset.nearest(&normalize_snippet(seq.slice(s![.., .., s..s + k]), skeleton)?).0))
        .collect()
}

/// NDMS of a predicted continuation: the last [`NDMS_PREFIX`] input frames
/// are prepended, every window is matched to its nearest word and scored.
pub fn ndms_score<'a>(
    prediction: ArrayView3<'a, f64>,
    input_tail: ArrayView3<'a, f64>,
    refset: &ReferenceSet,
    skeleton: &SkeletonSpec,
) -> Result<f64> {
    let tail_len = input_tail.shape()[2].min(NDMS_PREFIX);
    let tail = input_tail.slice_move(s![.., .., input_tail.shape()[2] - tail_len..]);
    let seq = concatenate(Axis(2), &[tail, prediction])
        .map_err(|e| Error::Shape(format!("prediction and input tail disagree: {e}")))?;
    check(seq.view(), refset)?;
    let k = refset.kappa;
    let windows = seq.shape()[2] + 1 - k;
    let mut total = 0.0;
    for s in 0..windows {
        let w = normalize_snippet(seq.slice(s![.., .., s..s + k]), skeleton)?;
        let (idx, _) = refset.nearest(&w);
        total += snippet_score(&w, refset.word(idx), refset.joints, k);
    }
    Ok(total / windows as f64)
}

/// The last `κ − 1` input frames followed by the prediction.
pub fn chi<'a>(input: ArrayView3<'a, f64>, prediction: ArrayView3<'a, f64>, kappa: usize) -> Result<Array3<f64>> {
    let n = input.shape()[2];
    let keep = (kappa - 1).min(n);
    concatenate(Axis(2), &[input.slice_move(s![.., .., n - keep..]), prediction])
        .map_err(|e| Error::Shape(format!("input and prediction disagree: {e}")))
}

/// Distinct nearest words over all windows of `chi`, divided by the window count.
pub fn umwr(chi: ArrayView3<'_, f64>, refset: &ReferenceSet, skeleton: &SkeletonSpec) -> Result<f64> {
    let words = nearest_words(chi, refset, skeleton)?;
    let distinct: BTreeSet<usize> = words.iter().copied().collect();
    Ok(distinct.len() as f64 / words.len() as f64)
}

/// UMWR over the windows ending in second `k` (1-based) of the prediction:
/// `chi[fps·(k−1) .. fps·k + κ − 1]`.
pub fn umwr_at(
    chi: ArrayView3<'_, f64>,
    k: usize,
    fps: usize,
    refset: &ReferenceSet,
    skeleton: &SkeletonSpec,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("seconds are counted from 1".into()));
    }
    let start = fps * (k - 1);
    let end = fps * k + refset.kappa - 1;
    if end > chi.shape()[2] {
        return Err(Error::InvalidArgument(format!(
            "second {k} needs {end} frames, sequence has {}",
            chi.shape()[2]
        )));
    }
    umwr(chi.slice(s![.., .., start..end]), refset, skeleton)
}
