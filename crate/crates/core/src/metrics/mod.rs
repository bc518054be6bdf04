//! Forecast quality metrics: motion-word matching, realism and trajectory statistics.

pub mod motion;
pub mod realism;
pub mod refset;
pub mod report;
pub mod trajectory;

pub use motion::{chi, ndms_score, nearest_words, umwr, umwr_at, NDMS_PREFIX};
pub use realism::{
    auc, realism_at_k, train_realism, RealismClassifier, RealismReport, RealismTrainConfig, CLIP_LEN,
};
pub use refset::{ReferenceSet, SNIPPET_LEN};
pub use report::{evaluate, reference_set, EvalConfig, EvalItem, MetricReport, TrajectoryReport};
pub use trajectory::{root_trajectory, trajectory_length, velocity_curve, wasserstein1, VELOCITY_CLIP};
