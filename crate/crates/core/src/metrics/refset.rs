use std::collections::HashSet;
use std::path::Path;

use ndarray::{s, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::data::{SceneRecording, SkeletonSpec};
use crate::normalize::fit_norm;
use crate::{Error, Result};

pub const SNIPPET_LEN: usize = 8;
const MANIFEST: &str = "refset.json";
const WORDS: &str = "refset.bin";

/// Real motion snippets, each normalized at its own first frame and stored
/// flattened as `(J, 3, κ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    pub kappa: usize,
    pub joints: usize,
    pub source: String,
    words: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefsetManifest {
    format: String,
    kappa: usize,
    joints: usize,
    words: usize,
    source: String,
}

/// `(J, 3, κ)` snippet normalized at its first frame, flattened.
pub fn normalize_snippet(snippet: ArrayView3<'_, f64>, skeleton: &SkeletonSpec) -> Result<Vec<f64>> {
    let t = fit_norm(snippet, 0, skeleton)?;
    Ok(t.apply(snippet).iter().copied().collect())
}

impl ReferenceSet {
    pub fn word_len(&self) -> usize {
        self.joints * 3 * self.kappa
    }

    pub fn len(&self) -> usize {
        self.words.len() / self.word_len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, i: usize) -> &[f64] {
        let l = self.word_len();
        &self.words[i * l..(i + 1) * l]
    }

    /// Sliding `kappa`-frame windows over every sequence `(J, 3, len)`;
    /// exact duplicates keep their first occurrence.
    pub fn build<'a>(
        sequences: impl IntoIterator<Item = ArrayView3<'a, f64>>,
        kappa: usize,
        skeleton: &SkeletonSpec,
        source: &str,
    ) -> Result<Self> {
        if kappa < 2 {
            return Err(Error::InvalidArgument(format!("snippet length {kappa} must be at least 2")));
        }
        let joints = skeleton.joint_count();
        let mut seen = HashSet::new();
        let mut words = Vec::new();
        for seq in sequences {
            if seq.shape()[0] != joints || seq.shape()[1] != 3 {
                return Err(Error::Shape(format!("sequence {:?} does not match the skeleton", seq.shape())));
            }
            let len = seq.shape()[2];
            for start in 0..(len + 1).saturating_sub(kappa) {
                let w = normalize_snippet(seq.slice(s![.., .., start..start + kappa]), skeleton)?;
                let key: Vec<u64> = w.iter().map(|v| v.to_bits()).collect();
                if seen.insert(key) {
                    words.extend(w);
                }
            }
        }
        if words.is_empty() {
            return Err(Error::InvalidArgument("reference set needs at least one full snippet".into()));
        }
        Ok(Self {
            kappa,
            joints,
            source: source.to_string(),
            words,
        })
    }

    /// Snippets from every person track of every recording.
    pub fn from_recordings(recordings: &[SceneRecording], kappa: usize, source: &str) -> Result<Self> {
        let first = recordings
            .first()
            .ok_or_else(|| Error::InvalidArgument("no recordings for the reference set".into()))?;
        let tracks: Vec<_> = recordings
            .iter()
            .flat_map(|r| r.persons.iter())
            .map(|t| t.joints.mapv(f64::from).permuted_axes([1, 2, 0]))
            .collect();
        Self::build(tracks.iter().map(|t| t.view()), kappa, &first.skeleton, source)
    }

    /// Index of the closest word (Euclidean); ties go to the lower index.
    pub fn nearest(&self, query: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for i in 0..self.len() {
            let w = self.word(i);
            let mut d = 0.0;
            for (a, b) in query.iter().zip(w) {
                d += (a - b) * (a - b);
                if d >= best.1 {
                    break;
                }
            }
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = RefsetManifest {
            format: "scenecast-refset".into(),
            kappa: self.kappa,
            joints: self.joints,
            words: self.len(),
            source: self.source.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let bytes: Vec<u8> = self.words.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(dir.join(WORDS), bytes).map_err(|e| Error::io(dir.join(WORDS), e))?;
        std::fs::write(dir.join(MANIFEST), json).map_err(|e| Error::io(dir.join(MANIFEST), e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: RefsetManifest = serde_json::from_slice(&text).map_err(|e| Error::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let bytes = std::fs::read(dir.join(WORDS)).map_err(|e| Error::io(dir.join(WORDS), e))?;
        let words: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if bytes.len() % 8 != 0 || words.len() != m.words * m.joints * 3 * m.kappa || m.words == 0 {
            return Err(Error::Shape(format!("{WORDS} does not hold {} words", m.words)));
        }
        Ok(Self {
            kappa: m.kappa,
            joints: m.joints,
            source: m.source,
            words,
        })
    }
}
