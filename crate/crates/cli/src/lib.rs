//! The `scenecast` command-line pipeline: synthetic data, training,
//! sampling, evaluation and plots.

pub mod cli;
pub mod commands;
pub mod config;
pub mod forecasts;
pub mod plot;

pub use cli::{run, Cli, Command};

/// Machine-readable error record printed on failure.
pub fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<scenecast::Error>())
        .map(|e| match e {
            scenecast::Error::Io { .. } => "io",
            scenecast::Error::Manifest { .. } => "manifest",
            scenecast::Error::Shape(_) => "shape",
            scenecast::Error::UnknownObjectType(_) => "unknown_object_type",
            scenecast::Error::InvalidRecording(_) => "invalid_recording",
            scenecast::Error::InvalidArgument(_) => "invalid_argument",
            scenecast::Error::Infeasible(_) => "infeasible",
            scenecast::Error::NonFinite(_) => "non_finite",
            scenecast::Error::Checkpoint(_) => "checkpoint",
            scenecast::Error::Tensor(_) => "tensor",
        })
        .or_else(|| {
            err.chain().find_map(|e| {
                if e.is::<std::io::Error>() {
                    Some("io")
                } else if e.is::<toml::de::Error>() {
                    Some("config")
                } else {
                    None
                }
            })
        })
        .unwrap_or("runtime");
    serde_json::json!({
        "error": {
            "kind": kind,
            "message": err.to_string(),
            "causes": err.chain().skip(1).map(|e| e.to_string()).collect::<Vec<_>>(),
        }
    })
}
