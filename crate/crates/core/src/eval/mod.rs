//! Metrics, threshold selection, protocol runs and reports.

pub mod metrics;
pub mod protocol;
pub mod report;

pub use metrics::{compute_rates, select_threshold_eer, ConfusionCounts, Rates};
pub use protocol::{run_protocol, ClassifierConfig, SampleFeatures, TrainedModels};
pub use report::{render, EvalReport, ReportFormat};
