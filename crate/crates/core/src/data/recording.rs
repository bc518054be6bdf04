use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const OBJECT_TYPE_COUNT: usize = 13;

/// Object categories used for the one-hot part of an object encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectType {
    Wall,
    Table,
    StandingTable,
    Drawer,
    Cupboard,
    Chair,
    Sofa,
    Whiteboard,
    CoffeeMachine,
    Dishwasher,
    Sink,
    Microwave,
    Fridge,
}

impl ObjectType {
    pub const ALL: [ObjectType; OBJECT_TYPE_COUNT] = [
        ObjectType::Wall,
        ObjectType::Table,
        ObjectType::StandingTable,
        ObjectType::Drawer,
        ObjectType::Cupboard,
        ObjectType::Chair,
        ObjectType::Sofa,
        ObjectType::Whiteboard,
        ObjectType::CoffeeMachine,
        ObjectType::Dishwasher,
        ObjectType::Sink,
        ObjectType::Microwave,
        ObjectType::Fridge,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectType::Wall => "wall",
            ObjectType::Table => "table",
            ObjectType::StandingTable => "standing_table",
            ObjectType::Drawer => "drawer",
            ObjectType::Cupboard => "cupboard",
            ObjectType::Chair => "chair",
            ObjectType::Sofa => "sofa",
            ObjectType::Whiteboard => "whiteboard",
            ObjectType::CoffeeMachine => "coffee_machine",
            ObjectType::Dishwasher => "dishwasher",
            ObjectType::Sink => "sink",
            ObjectType::Microwave => "microwave",
            ObjectType::Fridge => "fridge",
        }
    }
}

impl fmt::Display for ObjectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownObjectType(s.to_string()))
    }
}

/// Joint layout of the skeleton shared by every track in a recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    /// 0-based index of the left hip joint.
    pub left_hip: usize,
    /// 0-based index of the right hip joint.
    pub right_hip: usize,
    pub fps: f64,
}

const DEFAULT_JOINTS: [&str; 17] = [
    "head",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_ankle",
    "right_ankle",
    "left_knee",
    "right_knee",
    "left_hip",
    "right_hip",
    "pelvis",
    "spine",
    "chest",
];

impl Default for SkeletonSpec {
    /// 17 joints at 25 fps; hips are joints 13 and 14 counting from one.
    fn default() -> Self {
        Self {
            joint_names: DEFAULT_JOINTS.iter().map(|s| s.to_string()).collect(),
            left_hip: 12,
            right_hip: 13,
            fps: 25.0,
        }
    }
}

impl SkeletonSpec {
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.joint_count();
        if j == 0 {
            return Err(Error::InvalidRecording("skeleton has no joints".into()));
        }
        if self.left_hip == self.right_hip || self.left_hip >= j || self.right_hip >= j {
            return Err(Error::InvalidRecording(format!(
                "hip indices ({}, {}) invalid for {j} joints",
                self.left_hip, self.right_hip
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::InvalidRecording(format!("fps must be positive, got {}", self.fps)));
        }
        Ok(())
    }
}

/// One person's joint trajectory, global Cartesian coordinates in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonTrack {
    pub person_id: String,
    pub first_frame: usize,
    /// Shape `(frames, J, 3)`.
    pub joints: Array3<f32>,
}

impl PersonTrack {
    pub fn frame_count(&self) -> usize {
        self.joints.shape()[0]
    }

    /// Inclusive index of the last real frame.
    pub fn last_frame(&self) -> usize {
        self.first_frame + self.frame_count() - 1
    }

    pub fn covers(&self, frame: usize) -> bool {
        frame >= self.first_frame && frame <= self.last_frame()
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        let shape = self.joints.shape();
        if shape[0] == 0 {
            return Err(Error::InvalidRecording(format!("track {} has no frames", self.person_id)));
        }
        if shape[1] != joint_count || shape[2] != 3 {
            return Err(Error::Shape(format!(
                "track {} has shape {:?}, expected (_, {joint_count}, 3)",
                self.person_id, shape
            )));
        }
        if self.joints.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("track {}", self.person_id)));
        }
        Ok(())
    }
}

/// Rotation about the vertical axis followed by a translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidPose {
    pub yaw: f64,
    pub translation: [f64; 3],
}

impl RigidPose {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            c * p[0] - s * p[1] + self.translation[0],
            s * p[0] + c * p[1] + self.translation[1],
            p[2] + self.translation[2],
        ]
    }
}

/// From `frame` on (until the next override) the object's points are moved by `pose`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseOverride {
    pub frame: usize,
    pub pose: RigidPose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub object_id: String,
    pub object_type: ObjectType,
    /// Shape `(M, 3)`, meters.
    pub points: Array2<f32>,
    /// Sorted by frame.
    pub pose_overrides: Vec<PoseOverride>,
}

impl SceneObject {
    pub fn new(object_id: impl Into<String>, object_type: ObjectType, points: Array2<f32>) -> Self {
        Self {
            object_id: object_id.into(),
            object_type,
            points,
            pose_overrides: Vec::new(),
        }
    }

    pub fn point_count(&self) -> usize {
        self.points.nrows()
    }

    /// Point cloud as it stands at `frame`.
    pub fn points_at(&self, frame: usize) -> Array2<f64> {
        let pose = self
            .pose_overrides
            .iter()
            .take_while(|o| o.frame <= frame)
            .last()
            .map(|o| o.pose);
        let mut out = self.points.mapv(f64::from);
        if let Some(pose) = pose {
            for mut row in out.rows_mut() {
                let q = pose.apply([row[0], row[1], row[2]]);
                row[0] = q[0];
                row[1] = q[1];
                row[2] = q[2];
            }
        }
        out
    }

    /// Static copy of the object frozen at `frame`.
    pub fn snapshot(&self, frame: usize) -> SceneObject {
        if self.pose_overrides.is_empty() {
            return SceneObject::new(self.object_id.clone(), self.object_type, self.points.clone());
        }
        SceneObject::new(
            self.object_id.clone(),
            self.object_type,
            self.points_at(frame).mapv(|v| v as f32),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.nrows() == 0 {
            return Err(Error::InvalidRecording(format!("object {} has no points", self.object_id)));
        }
        if self.points.ncols() != 3 {
            return Err(Error::Shape(format!(
                "object {} points have {} columns",
                self.object_id,
                self.points.ncols()
            )));
        }
        if self.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("object {}", self.object_id)));
        }
        if self.pose_overrides.windows(2).any(|w| w[0].frame > w[1].frame) {
            return Err(Error::InvalidRecording(format!(
                "object {} pose overrides are not sorted",
                self.object_id
            )));
        }
        Ok(())
    }
}

/// A full multi-person capture with its scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecording {
    pub skeleton: SkeletonSpec,
    pub persons: Vec<PersonTrack>,
    pub objects: Vec<SceneObject>,
    pub total_frames: usize,
    /// Per-person per-frame activity labels keyed by person id, one entry per track frame.
    pub labels: Option<BTreeMap<String, Vec<String>>>,
}

impl SceneRecording {
    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let j = self.skeleton.joint_count();
        let mut ids = std::collections::BTreeSet::new();
        for track in &self.persons {
            track.validate(j)?;
            if track.last_frame() >= self.total_frames {
                return Err(Error::InvalidRecording(format!(
                    "track {} ends at frame {} beyond total {}",
                    track.person_id,
                    track.last_frame(),
                    self.total_frames
                )));
            }
            if !ids.insert(track.person_id.as_str()) {
                return Err(Error::InvalidRecording(format!(
                    "duplicate person id {}",
                    track.person_id
                )));
            }
        }
        for object in &self.objects {
            object.validate()?;
        }
        if let Some(labels) = &self.labels {
            for (id, seq) in labels {
                let track = self
                    .persons
                    .iter()
                    .find(|t| &t.person_id == id)
                    .ok_or_else(|| Error::InvalidRecording(format!("labels for unknown person {id}")))?;
                if seq.len() != track.frame_count() {
                    return Err(Error::Shape(format!(
                        "labels for {id} have {} entries, track has {} frames",
                        seq.len(),
                        track.frame_count()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn person(&self, id: &str) -> Option<&PersonTrack> {
        self.persons.iter().find(|t| t.person_id == id)
    }
}
