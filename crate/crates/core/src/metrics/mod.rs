//! Ranking metrics, bootstrap intervals and clustering agreement scores.

mod agreement;
mod bootstrap;
mod curves;
mod ranking;
mod report;

pub use agreement::{adjusted_rand_index, cluster_accuracy};
pub use bootstrap::{
    bootstrap_ci, bootstrap_ci_with, quantile_sorted, BootstrapConfig, MetricEstimate, MAX_REDRAWS,
};
pub use curves::{pr_curve, roc_curve, write_pr_csv, write_roc_csv, PrPoint, RocPoint};
pub use ranking::{aupr, auroc, prevalence_baseline, RankingMetric, ScoredLabels};
pub use report::MetricReport;
