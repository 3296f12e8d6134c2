use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::MetricEstimate;
use crate::error::{Error, Result};

/// One metric of one model on one dataset, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub model_tag: String,
    pub metric: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "percentile")]
    pub ci_method: String,
}

fn percentile() -> String {
    "percentile".to_string()
}

impl MetricReport {
    pub fn new(dataset: &str, model_tag: &str, metric: &str, est: &MetricEstimate) -> Self {
        MetricReport {
            dataset: dataset.to_string(),
            model_tag: model_tag.to_string(),
            metric: metric.to_string(),
            point: est.point,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            n_boot: est.n_boot,
            alpha: est.alpha,
            seed: est.seed,
            ci_method: percentile(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
