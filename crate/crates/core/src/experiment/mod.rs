//! Manifest-driven experiment runs: the artifact pipeline and reporting.

pub mod manifest;
pub mod pipeline;
pub mod report;

pub use manifest::ExperimentManifest;
pub use pipeline::{artifact_hash, metrics_file, ArmMetrics, Experiment, Outcome, Which, CURVETE_ARM};
pub use report::build_report;
