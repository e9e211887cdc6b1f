//! Segmentation metrics, domain aggregates, clustering agreement,
//! biased-alignment curves and feature export.

pub mod metrics;
pub mod report;

pub use metrics::{adjusted_rand_index, aggregate_domains, compute_miou, ConfusionMatrix, DomainMetrics, MiouResult, StyleScore};
pub use report::{
    biased_alignment_curves, confusion, evaluate, export_features, metrics_csv_rows, Curves, Evaluation, FeatureExport,
    FeatureInput, FeatureRow, StyleSet, METRICS_HEADER,
};
