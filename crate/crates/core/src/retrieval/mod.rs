//! Distances, cross-camera CMC/mAP and k-reciprocal re-ranking.

mod distance;
mod metrics;
pub mod rerank;

pub use distance::{distance_matrix, pair_distance, DistanceMatrix, Metric};
pub use metrics::{
    average_precision, cmc, mean_ap, metrics_report, rank_list, CmcCurve, MeanAp, MetricsReport,
    Tag, REPORT_RANKS,
};
pub use rerank::{k_reciprocal_rerank, RerankParams};
