use ndarray::{s, Array2, Array3, Array4, ArrayView3};
use rand::Rng;

use super::recording::{PersonTrack, SceneObject, SceneRecording, SkeletonSpec};
use crate::{rng, Error, Result};

/// Copy `track` into the frame range `[start, end)`, replicating the first
/// and last real pose outside the track's span.
///
/// Returns the `(J, 3, end - start)` sequence and the presence mask, which is
/// false exactly on padded frames.
pub fn zero_velocity_pad(
    track: &PersonTrack,
    start: usize,
    end: usize,
) -> Result<(Array3<f64>, Vec<bool>)> {
    if end <= start {
        return Err(Error::InvalidArgument(format!("empty window {start}..{end}")));
    }
    if track.last_frame() < start || track.first_frame >= end {
        return Err(Error::InvalidArgument(format!(
            "track {} ({}..={}) does not overlap window {start}..{end}",
            track.person_id,
            track.first_frame,
            track.last_frame()
        )));
    }
    let len = end - start;
    let j = track.joints.shape()[1];
    let mut out = Array3::zeros((j, 3, len));
    let mut mask = vec![false; len];
    for (f, present) in mask.iter_mut().enumerate() {
        let frame = start + f;
        let src = frame.clamp(track.first_frame, track.last_frame()) - track.first_frame;
        *present = track.covers(frame);
        let pose = track.joints.slice(s![src, .., ..]);
        out.slice_mut(s![.., .., f]).assign(&pose.mapv(f64::from));
    }
    Ok((out, mask))
}

/// A fixed-length multi-person window: `input_len` observed frames followed
/// by the frames to forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiPersonWindow {
    /// Caller-assigned recording tag; keys undersampling decisions together with `start`.
    pub recording: usize,
    pub start: usize,
    pub input_len: usize,
    pub person_ids: Vec<String>,
    /// Shape `(P, J, 3, N)`.
    pub positions: Array4<f64>,
    /// Shape `(P, N)`; false on padded frames.
    pub presence: Array2<bool>,
    /// Scene frozen at the last input frame.
    pub scene: Vec<SceneObject>,
    /// Per person, per window frame; padded frames repeat the nearest real label.
    pub labels: Option<Vec<Vec<String>>>,
}

impl MultiPersonWindow {
    pub fn person_count(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn joint_count(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn total_len(&self) -> usize {
        self.positions.shape()[3]
    }

    pub fn person(&self, i: usize) -> ArrayView3<'_, f64> {
        self.positions.slice(s![i, .., .., ..])
    }

    /// Build a window from already padded sequences (used for forecasts and tests).
    pub fn from_sequences(
        person_ids: Vec<String>,
        positions: Array4<f64>,
        presence: Array2<bool>,
        input_len: usize,
        scene: Vec<SceneObject>,
    ) -> Result<Self> {
        let p = positions.shape()[0];
        let n_total = positions.shape()[3];
        if person_ids.len() != p || presence.shape() != [p, n_total] {
            return Err(Error::Shape(format!(
                "{} ids and presence {:?} for positions {:?}",
                person_ids.len(),
                presence.shape(),
                positions.shape()
            )));
        }
        if input_len == 0 || input_len >= n_total {
            return Err(Error::InvalidArgument(format!(
                "input length {input_len} must be in 1..{n_total}"
            )));
        }
        Ok(Self {
            recording: 0,
            start: 0,
            input_len,
            person_ids,
            positions,
            presence,
            scene,
            labels: None,
        })
    }
}

/// Cut `rec` into windows of `total_len` frames starting every `stride`
/// frames. A window holds exactly the persons with at least one real frame
/// among its first `input_len` frames.
pub fn make_windows(
    rec: &SceneRecording,
    input_len: usize,
    total_len: usize,
    stride: usize,
) -> Result<Vec<MultiPersonWindow>> {
    if input_len == 0 || input_len >= total_len {
        return Err(Error::InvalidArgument(format!(
            "input length {input_len} must be in 1..{total_len}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if total_len > rec.total_frames {
        return Err(Error::InvalidArgument(format!(
            "window of {total_len} frames exceeds recording of {}",
            rec.total_frames
        )));
    }
    let j = rec.skeleton.joint_count();
    let mut windows = Vec::new();
    let mut start = 0;
    while start + total_len <= rec.total_frames {
        let end = start + total_len;
        let input_end = start + input_len;
        let present: Vec<&PersonTrack> = rec
            .persons
            .iter()
            .filter(|t| t.first_frame < input_end && t.last_frame() >= start)
            .collect();
        let p = present.len();
        let mut positions = Array4::zeros((p, j, 3, total_len));
        let mut presence = Array2::from_elem((p, total_len), false);
        let mut labels = rec.labels.as_ref().map(|_| Vec::with_capacity(p));
        for (i, track) in present.iter().enumerate() {
            let (seq, mask) = zero_velocity_pad(track, start, end)?;
            positions.slice_mut(s![i, .., .., ..]).assign(&seq);
            for (f, m) in mask.iter().enumerate() {
                presence[[i, f]] = *m;
            }
            if let (Some(out), Some(all)) = (labels.as_mut(), rec.labels.as_ref()) {
                let track_labels = all.get(&track.person_id);
                out.push(
                    (start..end)
                        .map(|frame| {
                            track_labels
                                .map(|l| {
                                    let src = frame.clamp(track.first_frame, track.last_frame())
                                        - track.first_frame;
                                    l[src].clone()
                                })
                                .unwrap_or_default()
                        })
                        .collect(),
                );
            }
        }
        let scene_frame = input_end - 1;
        windows.push(MultiPersonWindow {
            recording: 0,
            start,
            input_len,
            person_ids: present.iter().map(|t| t.person_id.clone()).collect(),
            positions,
            presence,
            scene: rec.objects.iter().map(|o| o.snapshot(scene_frame)).collect(),
            labels,
        });
        start += stride;
    }
    Ok(windows)
}

/// Fallback classifier for windows without activity labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandingDetector {
    /// Largest planar distance of the hip midpoint from its first real position, meters.
    pub max_root_displacement: f64,
    /// Largest allowed range of hip-midpoint height, meters.
    pub max_hip_height_range: f64,
}

impl Default for StandingDetector {
    fn default() -> Self {
        Self {
            max_root_displacement: 0.2,
            max_hip_height_range: 0.1,
        }
    }
}

impl StandingDetector {
    pub fn is_standing(&self, window: &MultiPersonWindow, skeleton: &SkeletonSpec) -> bool {
        let (l, r) = (skeleton.left_hip, skeleton.right_hip);
        (0..window.person_count()).all(|i| {
            let seq = window.person(i);
            let mut origin = None;
            let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut max_disp: f64 = 0.0;
            for f in 0..window.total_len() {
                if !window.presence[[i, f]] {
                    continue;
                }
                let x = 0.5 * (seq[[l, 0, f]] + seq[[r, 0, f]]);
                let y = 0.5 * (seq[[l, 1, f]] + seq[[r, 1, f]]);
                let z = 0.5 * (seq[[l, 2, f]] + seq[[r, 2, f]]);
                let (ox, oy) = *origin.get_or_insert((x, y));
                max_disp = max_disp.max(((x - ox).powi(2) + (y - oy).powi(2)).sqrt());
                zmin = zmin.min(z);
                zmax = zmax.max(z);
            }
            max_disp < self.max_root_displacement && zmax - zmin < self.max_hip_height_range
        })
    }
}

#[derive(Debug)]
pub struct UndersampleOutcome {
    pub windows: Vec<MultiPersonWindow>,
    pub removed: usize,
    /// Set when no window could be classified (no labels and no detector).
    pub unclassified: bool,
}

fn labelled_standing(window: &MultiPersonWindow) -> Option<bool> {
    let labels = window.labels.as_ref()?;
    Some(labels.iter().enumerate().all(|(i, per_frame)| {
        per_frame
            .iter()
            .enumerate()
            .filter(|(f, _)| window.presence[[i, *f]])
            .all(|(_, l)| l == "standing")
    }))
}

/// Drop each standing-only window independently with probability
/// `fraction`. The decision for a window depends only on `seed` and the
/// window's `(recording, start)` key.
pub fn undersample_standing(
    windows: Vec<MultiPersonWindow>,
    fraction: f64,
    seed: u64,
    skeleton: &SkeletonSpec,
    detector: Option<StandingDetector>,
) -> Result<UndersampleOutcome> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside [0, 1]")));
    }
    let mut removed = 0;
    let mut classified_any = false;
    let mut kept = Vec::with_capacity(windows.len());
    for window in windows {
        let standing = labelled_standing(&window)
            .or_else(|| detector.map(|d| d.is_standing(&window, skeleton)));
        classified_any |= standing.is_some();
        if standing == Some(true) {
            let key = ((window.recording as u64) << 32) | window.start as u64;
            let draw: f64 = rng::stream(seed, key).gen();
            if draw < fraction {
                removed += 1;
                continue;
            }
        }
        kept.push(window);
    }
    let unclassified = !classified_any && !kept.is_empty();
    if unclassified {
        log::warn!("undersampling skipped: windows carry no labels and no standing detector is set");
    }
    Ok(UndersampleOutcome {
        windows: kept,
        removed,
        unclassified,
    })
}
