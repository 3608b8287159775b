//! Training, per-image inference, vote fusion and evaluation.

mod infer;
mod metrics;
mod train;
mod vote;

pub use infer::{predict_set, run_inference_set, InferenceOutcome, Report};
pub use metrics::{confusion_matrix, evaluate, Metrics};
pub use train::{train, TrainConfig, TrainReport};
pub use vote::{hard_vote, soft_vote};
