//! Recording container: `manifest.json` plus `tracks.bin` and `objects.bin`.
//!
//! Binary payloads are row-major little-endian `f32`; the manifest records
//! every array's shape and byte offset. Output is deterministic: identical
//! recordings produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::recording::{PersonTrack, PoseOverride, SceneObject, SceneRecording, SkeletonSpec};
use crate::{Error, Result};

pub(crate) const FORMAT: &str = "scenecast-recording";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TRACKS: &str = "tracks.bin";
pub const OBJECTS: &str = "objects.bin";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    total_frames: usize,
    skeleton: SkeletonSpec,
    persons: Vec<TrackEntry>,
    objects: Vec<ObjectEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<BTreeMap<String, Vec<String>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackEntry {
    id: String,
    first_frame: usize,
    last_frame: usize,
    shape: [usize; 3],
    offset: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectEntry {
    id: String,
    #[serde(rename = "type")]
    object_type: String,
    shape: [usize; 2],
    offset: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    poses: Vec<PoseOverride>,
}

pub(crate) fn f32_bytes<'a>(values: impl IntoIterator<Item = &'a f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_recording(rec: &SceneRecording, dir: &Path) -> Result<()> {
    rec.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut tracks = Vec::new();
    let mut persons = Vec::with_capacity(rec.persons.len());
    for track in &rec.persons {
        let s = track.joints.shape();
        persons.push(TrackEntry {
            id: track.person_id.clone(),
            first_frame: track.first_frame,
            last_frame: track.last_frame(),
            shape: [s[0], s[1], s[2]],
            offset: tracks.len() as u64,
        });
        f32_bytes(track.joints.iter(), &mut tracks);
    }

    let mut objects_bin = Vec::new();
    let mut objects = Vec::with_capacity(rec.objects.len());
    for object in &rec.objects {
        objects.push(ObjectEntry {
            id: object.object_id.clone(),
            object_type: object.object_type.name().to_string(),
            shape: [object.points.nrows(), object.points.ncols()],
            offset: objects_bin.len() as u64,
            poses: object.pose_overrides.clone(),
        });
        f32_bytes(object.points.iter(), &mut objects_bin);
    }

    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        total_frames: rec.total_frames,
        skeleton: rec.skeleton.clone(),
        persons,
        objects,
        labels: rec.labels.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');

    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write(MANIFEST, json.as_bytes())?;
    write(TRACKS, &tracks)?;
    write(OBJECTS, &objects_bin)?;
    Ok(())
}

fn slice_payload<'a>(
    payload: &'a [u8],
    offset: u64,
    count: usize,
    what: &str,
) -> Result<&'a [u8]> {
    let start = offset as usize;
    let end = start + count * 4;
    payload.get(start..end).ok_or_else(|| {
        Error::Shape(format!(
            "{what} expects bytes {start}..{end} but payload has {} bytes",
            payload.len()
        ))
    })
}

pub fn load_recording(dir: &Path) -> Result<SceneRecording> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Manifest {
            path: manifest_path,
            reason: format!("unsupported format {} v{}", manifest.format, manifest.version),
        });
    }
    let j = manifest.skeleton.joint_count();

    let tracks_path = dir.join(TRACKS);
    let tracks_bin = fs::read(&tracks_path).map_err(|e| Error::io(&tracks_path, e))?;
    let objects_path = dir.join(OBJECTS);
    let objects_bin = fs::read(&objects_path).map_err(|e| Error::io(&objects_path, e))?;

    let mut expected_tracks = 0usize;
    let mut persons = Vec::with_capacity(manifest.persons.len());
    for entry in &manifest.persons {
        let [frames, joints, dims] = entry.shape;
        if joints != j || dims != 3 {
            return Err(Error::Shape(format!(
                "track {} declares shape {:?} but skeleton has {j} joints",
                entry.id, entry.shape
            )));
        }
        if entry.last_frame < entry.first_frame || entry.last_frame - entry.first_frame + 1 != frames {
            return Err(Error::Shape(format!(
                "track {} spans frames {}..={} but declares {frames} frames",
                entry.id, entry.first_frame, entry.last_frame
            )));
        }
        let count = frames * joints * dims;
        expected_tracks += count * 4;
        let bytes = slice_payload(&tracks_bin, entry.offset, count, &format!("track {}", entry.id))?;
        let joints = Array3::from_shape_vec((frames, joints, dims), read_f32s(bytes))
            .map_err(|e| Error::Shape(e.to_string()))?;
        persons.push(PersonTrack {
            person_id: entry.id.clone(),
            first_frame: entry.first_frame,
            joints,
        });
    }
    if expected_tracks != tracks_bin.len() {
        return Err(Error::Shape(format!(
            "manifest declares {expected_tracks} track bytes, {} holds {}",
            TRACKS,
            tracks_bin.len()
        )));
    }

    let mut expected_objects = 0usize;
    let mut objects = Vec::with_capacity(manifest.objects.len());
    for entry in &manifest.objects {
        let object_type = entry.object_type.parse()?;
        let [m, dims] = entry.shape;
        if dims != 3 {
            return Err(Error::Shape(format!("object {} declares shape {:?}", entry.id, entry.shape)));
        }
        expected_objects += m * 3 * 4;
        let bytes = slice_payload(&objects_bin, entry.offset, m * 3, &format!("object {}", entry.id))?;
        let points = Array2::from_shape_vec((m, 3), read_f32s(bytes))
            .map_err(|e| Error::Shape(e.to_string()))?;
        objects.push(SceneObject {
            object_id: entry.id.clone(),
            object_type,
            points,
            pose_overrides: entry.poses.clone(),
        });
    }
    if expected_objects != objects_bin.len() {
        return Err(Error::Shape(format!(
            "manifest declares {expected_objects} object bytes, {} holds {}",
            OBJECTS,
            objects_bin.len()
        )));
    }

    let rec = SceneRecording {
        skeleton: manifest.skeleton,
        persons,
        objects,
        total_frames: manifest.total_frames,
        labels: manifest.labels,
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, ObjectType, SynthConfig};

    fn tiny() -> SceneRecording {
        let skeleton = SkeletonSpec::default();
        let joints = Array3::from_shape_fn((4, 17, 3), |(f, j, d)| (f * 100 + j * 3 + d) as f32 * 0.01);
        SceneRecording {
            skeleton,
            persons: vec![PersonTrack {
                person_id: "p0".into(),
                first_frame: 2,
                joints,
            }],
            objects: vec![SceneObject::new(
                "o0",
                ObjectType::Fridge,
                Array2::from_shape_fn((5, 3), |(i, d)| (i + d) as f32),
            )],
            total_frames: 10,
            labels: None,
        }
    }

    #[test]
    fn round_trip_is_exact_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny();
        write_recording(&rec, dir.path()).unwrap();
        let first = fs::read(dir.path().join(MANIFEST)).unwrap();
        let first_bin = fs::read(dir.path().join(TRACKS)).unwrap();
        write_recording(&rec, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join(MANIFEST)).unwrap());
        assert_eq!(first_bin, fs::read(dir.path().join(TRACKS)).unwrap());
        assert_eq!(load_recording(dir.path()).unwrap(), rec);
    }

    #[test]
    fn empty_person_list_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = tiny();
        rec.persons.clear();
        write_recording(&rec, dir.path()).unwrap();
        let back = load_recording(dir.path()).unwrap();
        assert!(back.persons.is_empty());
        assert_eq!(back, rec);
    }

    #[test]
    fn payload_sized_for_fewer_joints_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let rec = tiny();
        write_recording(&rec, dir.path()).unwrap();
        // Rewrite the payload as if the skeleton had 16 joints.
        let mut bytes = Vec::new();
        f32_bytes(rec.persons[0].joints.iter().take(4 * 16 * 3), &mut bytes);
        fs::write(dir.path().join(TRACKS), bytes).unwrap();
        assert!(matches!(load_recording(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn unknown_type_and_malformed_manifest_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_recording(&tiny(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"fridge\"", "\"hovercraft\"")).unwrap();
        assert!(matches!(load_recording(dir.path()), Err(Error::UnknownObjectType(_))));
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_recording(dir.path()), Err(Error::Manifest { .. })));
    }

    #[test]
    fn synthetic_scene_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            persons: 2,
            objects: 3,
            duration_s: 4.0,
            ..SynthConfig::default()
        };
        let rec = synth_generate(&cfg, 3).unwrap();
        write_recording(&rec, dir.path()).unwrap();
        assert_eq!(load_recording(dir.path()).unwrap(), rec);
    }
}
