//! Agreement metrics and the experiment harness that fills the comparison
//! table.

pub mod experiment;
pub mod metrics;
pub mod report;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentError, ExperimentPlan, ItemConfig, ModelKind,
};
pub use metrics::{cohens_kappa, f1_score, f1_weighted, ConfusionCounts, F1Average, MetricError};
pub use report::{
    parse_report_csv, CellReport, CellStats, MetricReport, ReportError, ReportFormat,
    ReportMetadata,
};
