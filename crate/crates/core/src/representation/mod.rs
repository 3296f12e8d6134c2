//! Unsupervised analysis of extracted features: K-means scored against the
//! labels, and 2-D embeddings for scatter plots.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::metrics::{adjusted_rand_index, cluster_accuracy};
use crate::par::Execution;

mod embed;
mod kmeans;
mod neighborhood;

pub use embed::{embed_2d, embed_with, pca, write_embedding_csv, EmbedMethod, Embedding, Pca, Reducer2d};
pub use kmeans::{kmeans, KmeansConfig, KmeansResult};
pub use neighborhood::NeighborhoodReducer;

/// Row-major `n × d` feature matrix with one record id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    d: usize,
    record_ids: Vec<String>,
    model_tag: String,
}

impl FeatureMatrix {
    pub fn new(
        data: Vec<f64>,
        d: usize,
        record_ids: Vec<String>,
        model_tag: impl Into<String>,
    ) -> Result<Self> {
        if d == 0 || data.len() != d * record_ids.len() {
            return Err(Error::invalid(format!(
                "feature data of length {} does not match {} rows of width {d}",
                data.len(),
                record_ids.len()
            )));
        }
        if record_ids.len() < 2 {
            return Err(Error::invalid("a feature matrix needs at least 2 rows"));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature in row {} ({})",
                i / d,
                record_ids[i / d]
            )));
        }
        Ok(FeatureMatrix {
            data,
            d,
            record_ids,
            model_tag: model_tag.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.record_ids.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn record_ids(&self) -> &[String] {
        &self.record_ids
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    /// Columns shifted to zero mean and scaled to unit variance; constant
    /// columns are only centered.
    pub fn standardized(&self) -> FeatureMatrix {
        let (n, d) = (self.n(), self.d);
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&mean).zip(&var) {
                *v -= m;
                if *s > 0.0 {
                    *v /= s.sqrt();
                }
            }
        }
        FeatureMatrix {
            data,
            d,
            record_ids: self.record_ids.clone(),
            model_tag: self.model_tag.clone(),
        }
    }

    /// CSV with header `record_id,f0,f1,...`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["record_id".to_string()];
        header.extend((0..self.d).map(|j| format!("f{j}")));
        w.write_record(&header)?;
        for (i, id) in self.record_ids.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub model_tag: String,
    pub assignments: Vec<usize>,
    pub accuracy: f64,
    pub ari: f64,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub objective: f64,
    pub empty_clusters: usize,
    pub standardized: bool,
}

/// K-means on the features (optionally z-scored) scored against `labels`
/// with permutation-matched accuracy and ARI.
pub fn evaluate_clustering(
    features: &FeatureMatrix,
    labels: &[ClassLabel],
    cfg: &KmeansConfig,
    standardize: bool,
    exec: Execution,
) -> Result<ClusterReport> {
    if labels.len() != features.n() {
        return Err(Error::invalid(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.n()
        )));
    }
    let result = if standardize {
        log::info!("standardizing features before k-means");
        kmeans(&features.standardized(), cfg, exec)?
    } else {
        kmeans(features, cfg, exec)?
    };
    let truth: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    Ok(ClusterReport {
        model_tag: features.model_tag.clone(),
        accuracy: cluster_accuracy(&result.assignments, &truth)?,
        ari: adjusted_rand_index(&result.assignments, &truth)?,
        assignments: result.assignments,
        k: cfg.k,
        seed: cfg.seed,
        restarts: cfg.restarts,
        objective: result.objective,
        empty_clusters: result.empty_clusters,
        standardized: standardize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<ClassLabel> {
        (0..n)
            .map(|i| ClassLabel::from_index(i % 2).unwrap())
            .collect()
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(FeatureMatrix::new(vec![1.0; 3], 2, ids.clone(), "t").is_err());
        assert!(FeatureMatrix::new(vec![1.0, f64::NAN, 0.0, 0.0], 2, ids.clone(), "t").is_err());
        assert!(FeatureMatrix::new(vec![1.0], 1, vec!["a".into()], "t").is_err());
        assert!(FeatureMatrix::new(vec![1.0; 4], 2, ids, "t").is_ok());
    }

    #[test]
    fn separable_features_score_perfectly_and_flip_invariantly() {
        let n = 40;
        let data: Vec<f64> = (0..n).flat_map(|i| [(i % 2) as f64 * 10.0, 0.5]).collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let f = FeatureMatrix::new(data, 2, ids, "sep").unwrap();
        let cfg = KmeansConfig::new(2, 3);
        let a = evaluate_clustering(&f, &labels(n), &cfg, false, Execution::Parallel).unwrap();
        assert_eq!((a.accuracy, a.ari), (1.0, 1.0));
        let flipped: Vec<ClassLabel> = labels(n)
            .into_iter()
            .map(|l| ClassLabel::from_index(1 - l.index()).unwrap())
            .collect();
        let b = evaluate_clustering(&f, &flipped, &cfg, false, Execution::Parallel).unwrap();
        assert_eq!((a.accuracy, a.ari), (b.accuracy, b.ari));
    }

    #[test]
    fn random_features_have_near_zero_ari() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 1000;
        let data: Vec<f64> = (0..n * 4).map(|_| rng.random::<f64>()).collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let f = FeatureMatrix::new(data, 4, ids, "rnd").unwrap();
        let labels: Vec<ClassLabel> = (0..n)
            .map(|_| ClassLabel::from_index(rng.random_range(0..2)).unwrap())
            .collect();
        let r = evaluate_clustering(&f, &labels, &KmeansConfig::new(2, 0), false, Execution::Parallel)
            .unwrap();
        assert!(r.ari.abs() < 0.1, "ari {}", r.ari);
    }

    #[test]
    fn standardization_centers_and_scales() {
        let data = vec![1.0, 100.0, 3.0, 300.0, 5.0, 500.0];
        let ids = (0..3).map(|i| i.to_string()).collect();
        let s = FeatureMatrix::new(data, 2, ids, "t").unwrap().standardized();
        for j in 0..2 {
            let col: Vec<f64> = (0..3).map(|i| s.row(i)[j]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }
}
