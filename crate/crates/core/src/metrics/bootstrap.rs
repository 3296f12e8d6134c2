//! Percentile bootstrap confidence intervals.
//!
//! Iteration `i` draws its resample from a ChaCha8 stream seeded with
//! `seed + i`, so the result is independent of how iterations are scheduled.
//! A resample on which the metric is undefined (one class only) is redrawn
//! from the same stream, at most [`MAX_REDRAWS`] times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ranking::{Ranked, RankingMetric, ScoredLabels};
use crate::error::{Error, Result};
use crate::par::Execution;

pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_boot: 1000,
            alpha: 0.05,
        }
    }
}

impl BootstrapConfig {
    fn check(&self) -> Result<()> {
        if self.n_boot == 0 {
            return Err(Error::invalid("n_boot must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(
    point: f64,
    mut values: Vec<f64>,
    cfg: BootstrapConfig,
    seed: u64,
) -> MetricEstimate {
    values.sort_by(f64::total_cmp);
    MetricEstimate {
        point,
        ci_low: quantile_sorted(&values, cfg.alpha / 2.0),
        ci_high: quantile_sorted(&values, 1.0 - cfg.alpha / 2.0),
        n_boot: cfg.n_boot,
        alpha: cfg.alpha,
        seed,
    }
}

fn iteration_rng(seed: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64))
}

/// Draw `n` indices with replacement until both classes are present.
fn draw_valid(
    rng: &mut ChaCha8Rng,
    labels: &[u8],
    iteration: usize,
    idx: &mut Vec<usize>,
) -> Result<()> {
    let n = labels.len();
    for _ in 0..=MAX_REDRAWS {
        idx.clear();
        let mut pos = 0;
        for _ in 0..n {
            let k = rng.random_range(0..n);
            pos += labels[k] as usize;
            idx.push(k);
        }
        if pos > 0 && pos < n {
            return Ok(());
        }
    }
    Err(Error::DegenerateBootstrap { iteration })
}

/// Bootstrap CI of a ranking metric. Resamples are evaluated as integer
/// multiplicities over a ranking computed once, which is exactly equivalent
/// to evaluating the metric on the materialized resample.
pub fn bootstrap_ci(
    metric: RankingMetric,
    data: &ScoredLabels,
    cfg: BootstrapConfig,
    seed: u64,
    exec: Execution,
) -> Result<MetricEstimate> {
    cfg.check()?;
    let point = metric.compute(data)?;
    let ranked = Ranked::new(data);
    let labels = data.labels();
    let values = exec.map_range(cfg.n_boot, |i| {
        let mut rng = iteration_rng(seed, i);
        let mut idx = Vec::with_capacity(labels.len());
        draw_valid(&mut rng, labels, i, &mut idx)?;
        let mut weights = vec![0u32; labels.len()];
        for &k in &idx {
            weights[k] += 1;
        }
        metric.compute_weighted(data, &ranked, &weights)
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(point, values, cfg, seed))
}

/// Bootstrap CI of an arbitrary metric, evaluated on materialized resamples.
/// Uses the same random streams as [`bootstrap_ci`].
pub fn bootstrap_ci_with<F>(
    metric: F,
    data: &ScoredLabels,
    cfg: BootstrapConfig,
    seed: u64,
    exec: Execution,
) -> Result<MetricEstimate>
where
    F: Fn(&ScoredLabels) -> Result<f64> + Sync + Send,
{
    cfg.check()?;
    let point = metric(data)?;
    let labels = data.labels();
    let values = exec.map_range(cfg.n_boot, |i| {
        let mut rng = iteration_rng(seed, i);
        let mut idx = Vec::with_capacity(labels.len());
        draw_valid(&mut rng, labels, i, &mut idx)?;
        metric(&data.select(&idx))
    });
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(summarize(point, values, cfg, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ranking::{aupr, auroc};

    fn data() -> ScoredLabels {
        let scores: Vec<f64> = (0..60).map(|i| ((i * 37) % 61) as f64 / 61.0).collect();
        let labels: Vec<u8> = (0..60).map(|i| ((i * 37) % 61 > 25) as u8 ^ (i % 7 == 0) as u8).collect();
        ScoredLabels::new(scores, labels).unwrap()
    }

    #[test]
    fn records_parameters() {
        let est = bootstrap_ci(
            RankingMetric::Auroc,
            &data(),
            BootstrapConfig::default(),
            3,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(est.n_boot, 1000);
        assert_eq!(est.alpha, 0.05);
        assert_eq!(est.seed, 3);
        assert!(est.ci_low <= est.point && est.point <= est.ci_high);
    }

    #[test]
    fn two_point_data_is_always_perfect() {
        let d = ScoredLabels::new(vec![0.2, 0.7], vec![0, 1]).unwrap();
        let est = bootstrap_ci(RankingMetric::Auroc, &d, BootstrapConfig::default(), 11, Execution::Parallel)
            .unwrap();
        assert_eq!((est.point, est.ci_low, est.ci_high), (1.0, 1.0, 1.0));
    }

    #[test]
    fn weighted_and_materialized_routes_agree() {
        let cfg = BootstrapConfig { n_boot: 200, alpha: 0.1 };
        let d = data();
        for (m, f) in [
            (RankingMetric::Auroc, auroc as fn(&ScoredLabels) -> Result<f64>),
            (RankingMetric::Aupr, aupr),
        ] {
            let a = bootstrap_ci(m, &d, cfg, 5, Execution::Parallel).unwrap();
            let b = bootstrap_ci_with(f, &d, cfg, 5, Execution::Sequential).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn execution_mode_does_not_change_result() {
        let d = data();
        let cfg = BootstrapConfig::default();
        let a = bootstrap_ci(RankingMetric::Aupr, &d, cfg, 9, Execution::Parallel).unwrap();
        let b = bootstrap_ci(RankingMetric::Aupr, &d, cfg, 9, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_data_fails() {
        let d = ScoredLabels::new(vec![0.1, 0.2, 0.3], vec![1, 1, 1]).unwrap();
        assert!(bootstrap_ci(RankingMetric::Auroc, &d, BootstrapConfig::default(), 0, Execution::Sequential)
            .is_err());
    }

    #[test]
    fn rare_positive_survives_via_redraws() {
        // about a third of the raw resamples miss the only positive
        let mut labels = vec![0u8; 2000];
        labels[0] = 1;
        let scores: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let d = ScoredLabels::new(scores, labels).unwrap();
        let cfg = BootstrapConfig { n_boot: 50, alpha: 0.05 };
        assert!(bootstrap_ci(RankingMetric::Auroc, &d, cfg, 1, Execution::Sequential).is_ok());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_config() {
        let d = data();
        for cfg in [
            BootstrapConfig { n_boot: 0, alpha: 0.05 },
            BootstrapConfig { n_boot: 10, alpha: 1.5 },
        ] {
            assert!(bootstrap_ci(RankingMetric::Auroc, &d, cfg, 0, Execution::Sequential).is_err());
        }
    }
}
