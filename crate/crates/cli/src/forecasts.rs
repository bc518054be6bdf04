//! On-disk forecasts: one directory per window holding a `forecast.json`
//! manifest and one recording directory per sample.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array3, Array4, Axis};
use scenecast::data::{load_recording, make_windows, write_recording, MultiPersonWindow, PersonTrack, SceneObject, SceneRecording, SkeletonSpec};
use scenecast::denoiser::Ablation;
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "forecast.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastManifest {
    pub seed: u64,
    pub samples: usize,
    pub ablation: Ablation,
    pub checkpoint: PathBuf,
    pub checkpoint_hash: String,
    /// Recording the window was cut from.
    pub source: PathBuf,
    pub window_start: usize,
    pub input_frames: usize,
    pub total_frames: usize,
    pub stride: usize,
    pub person_ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct WindowForecast {
    pub dir: PathBuf,
    pub manifest: ForecastManifest,
    /// `K` arrays `(P, J, 3, N)` in global coordinates, persons in manifest order.
    pub samples: Vec<Array4<f64>>,
}

pub fn window_dir(root: &Path, recording: usize, start: usize) -> PathBuf {
    root.join(format!("rec{recording:03}_f{start:06}"))
}

pub fn sample_dir(window: &Path, k: usize) -> PathBuf {
    window.join(format!("sample_{k:02}"))
}

/// A window-length recording with every person present on every frame.
pub fn to_recording(positions: &Array4<f64>, ids: &[String], scene: &[SceneObject], skeleton: &SkeletonSpec) -> SceneRecording {
    let persons = ids
        .iter()
        .zip(positions.outer_iter())
        .map(|(id, seq)| PersonTrack {
            person_id: id.clone(),
            first_frame: 0,
            joints: seq.permuted_axes([2, 0, 1]).mapv(|v| v as f32),
        })
        .collect();
    SceneRecording {
        skeleton: skeleton.clone(),
        persons,
        objects: scene.to_vec(),
        total_frames: positions.shape()[3],
        labels: None,
    }
}

fn from_recording(rec: &SceneRecording, ids: &[String]) -> Result<Array4<f64>> {
    let seqs: Vec<Array3<f64>> = ids
        .iter()
        .map(|id| {
            let t = rec.person(id).with_context(|| format!("forecast lacks person {id}"))?;
            if t.first_frame != 0 || t.frame_count() != rec.total_frames {
                bail!("forecast track {id} does not span the window");
            }
            Ok(t.joints.mapv(f64::from).permuted_axes([1, 2, 0]))
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
    Ok(ndarray::stack(Axis(0), &views)?)
}

pub fn write_window(
    dir: &Path,
    manifest: &ForecastManifest,
    samples: &[Array4<f64>],
    scene: &[SceneObject],
    skeleton: &SkeletonSpec,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (k, x) in samples.iter().enumerate() {
        write_recording(&to_recording(x, &manifest.person_ids, scene, skeleton), &sample_dir(dir, k))?;
    }
    let json = serde_json::to_string_pretty(manifest)? + "\n";
    std::fs::write(dir.join(MANIFEST), json).with_context(|| format!("writing {}", dir.join(MANIFEST).display()))
}

fn load_window(dir: &Path) -> Result<WindowForecast> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: ForecastManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let samples = (0..manifest.samples)
        .map(|k| {
            let rec = load_recording(&sample_dir(dir, k))?;
            from_recording(&rec, &manifest.person_ids)
        })
        .collect::<Result<_>>()?;
    Ok(WindowForecast {
        dir: dir.to_path_buf(),
        manifest,
        samples,
    })
}

/// Every window forecast under `root`, in directory-name order.
pub fn load_all(root: &Path) -> Result<Vec<WindowForecast>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .with_context(|| format!("reading forecasts in {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no forecasts found in {}", root.display());
    }
    dirs.iter().map(|d| load_window(d)).collect()
}

/// Ground-truth windows, loading each source recording once.
#[derive(Default)]
pub struct GroundTruth {
    recordings: HashMap<PathBuf, SceneRecording>,
}

impl GroundTruth {
    pub fn window(&mut self, m: &ForecastManifest) -> Result<MultiPersonWindow> {
        if !self.recordings.contains_key(&m.source) {
            let rec = load_recording(&m.source).with_context(|| format!("loading ground truth {}", m.source.display()))?;
            self.recordings.insert(m.source.clone(), rec);
        }
        let rec = &self.recordings[&m.source];
        let window = make_windows(rec, m.input_frames, m.total_frames, m.stride)?
            .into_iter()
            .find(|w| w.start == m.window_start)
            .with_context(|| format!("{} has no window starting at {}", m.source.display(), m.window_start))?;
        if window.person_ids != m.person_ids {
            bail!(
                "window mismatch at {}:{}: forecast persons {:?}, ground truth {:?}",
                m.source.display(),
                m.window_start,
                m.person_ids,
                window.person_ids
            );
        }
        Ok(window)
    }
}
