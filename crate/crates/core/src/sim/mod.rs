//! Simulation harness: a plant arm that differs from the controller's
//! model, a noisy tracker, the calibration procedures run on synthetic
//! measurements, and drilling trials scored against their plan.

pub mod batch;
pub mod metrics;
pub mod scenario;
pub mod synthetic;
pub mod trial;
pub mod vision;
pub mod world;

use thiserror::Error;

pub use batch::{run_batch, summarize, write_metrics_csv, BatchSummary, Execution};
pub use metrics::{fit_line, hole_errors, metrics_from_log, MetricsAccumulator, TrialMetrics};
pub use scenario::{BoneEvent, ForceEvent, ForcePoint, Scenario, VisionNoise};
pub use synthetic::{generate_recording, RecordingKind, Synthetic};
pub use trial::{run_trial, Simulation, Snapshot, TrialOutcome, LIVE_PARAMS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("scenario field `{field}`: {reason}")]
    ScenarioParse { field: String, reason: String },
    #[error("scenario field `{field}`: {reason}")]
    InvalidScenario { field: String, reason: String },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("simulation diverged: {0}")]
    Diverged(String),
}
