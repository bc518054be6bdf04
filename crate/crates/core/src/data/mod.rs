//! Motion recordings, windowing and synthetic data.

mod io;
mod recording;
pub mod synth;
mod window;

pub use io::{load_recording, write_recording};
pub use recording::{
    ObjectType, PersonTrack, PoseOverride, RigidPose, SceneObject, SceneRecording, SkeletonSpec,
    OBJECT_TYPE_COUNT,
};
pub use synth::{synth_generate, SynthConfig};
pub use window::{
    make_windows, undersample_standing, zero_velocity_pad, MultiPersonWindow, StandingDetector,
    UndersampleOutcome,
};
