//! Evaluation of predicted expression: per-gene correlation, gene-set
//! averages, moment preservation, gene-gene correlation and clustering
//! agreement.

mod cluster;
mod correlation;
mod report;

pub use cluster::{cluster_agreement, kmeans, n_clusters, Agreement, DEFAULT_CLUSTERS, KMEANS_MAX_ITER, KMEANS_TOL};
pub use correlation::{ggc, moment_preservation, pearson_per_gene, set_average, Ggc, Moments, PerGeneR, SetAverage};
pub use report::{ClusterScore, EvalConfig, MetricsReport, ReplicateSummary, SetScore};
