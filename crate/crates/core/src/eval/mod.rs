//! Ranking metrics, confidence intervals, logging-policy evaluation and the
//! bucketed comparison against the random ranker.

mod buckets;
mod ci;
mod metrics;
mod policy;

pub use buckets::{bucket_analysis, BucketReport, BucketStat, ModelScores};
pub use ci::{bootstrap_ci, mean_with_ci, CiMethod, MetricResult, Z_95};
pub use metrics::{dcg_at_k, gain, ideal_dcg_at_k, ndcg_at_k, rank_by_scores};
pub use policy::{
    per_query_metric, policy_accuracy, policy_strength, position_proxy_grade, random_ranker,
    random_scores, RankMetric,
};
