//! Lloyd's K-means with k-means++ seeding and independent restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KmeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KmeansConfig {
            k,
            restarts: 10,
            max_iter: 300,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Within-cluster sum of squares.
    pub objective: f64,
    /// Index of the restart that won.
    pub restart: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
    /// Clusters left without members (e.g. all rows identical).
    pub empty_clusters: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, lowest index on ties.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_seeds(x: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.n();
    let mut centers = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if t < w {
                    pick = i;
                    break;
                }
                t -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = x.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), &c));
        }
        centers.push(c);
    }
    centers
}

fn objective(x: &FeatureMatrix, assign: &[usize], centers: &[Vec<f64>]) -> f64 {
    (0..x.n()).map(|i| sq_dist(x.row(i), &centers[assign[i]])).sum()
}

/// One Lloyd run from the given centers. Empty clusters keep their center.
pub(crate) fn lloyd(
    x: &FeatureMatrix,
    mut centers: Vec<Vec<f64>>,
    max_iter: usize,
) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>, bool) {
    let (n, d, k) = (x.n(), x.d(), centers.len());
    let mut assign: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let next: Vec<usize> = (0..n).map(|i| nearest(x.row(i), &centers).0).collect();
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        history.push(objective(x, &assign, &centers));
    }
    (assign, centers, history, converged)
}

/// K-means over the rows of `x`. Each restart draws its own k-means++ seeds
/// from stream `restart` of a ChaCha8 generator keyed by `cfg.seed`; the
/// restart with the lowest objective wins (lowest index on ties).
pub fn kmeans(x: &FeatureMatrix, cfg: &KmeansConfig, exec: Execution) -> Result<KmeansResult> {
    if cfg.k < 2 {
        return Err(Error::invalid("k must be at least 2"));
    }
    if x.n() < cfg.k {
        return Err(Error::invalid(format!(
            "k = {} exceeds the number of rows ({})",
            cfg.k,
            x.n()
        )));
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(Error::invalid("restarts and max_iter must be at least 1"));
    }
    let runs = exec.map_range(cfg.restarts, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let seeds = plus_plus_seeds(x, cfg.k, &mut rng);
        let (assign, centers, history, converged) = lloyd(x, seeds, cfg.max_iter);
        let obj = objective(x, &assign, &centers);
        (assign, centers, history, converged, obj)
    });
    let (restart, _) = runs
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (r, run)| {
            if run.4 < best.1 {
                (r, run.4)
            } else {
                best
            }
        });
    let (assignments, centers, history, converged, obj) =
        runs.into_iter().nth(restart).expect("restart index in range");
    let mut used = vec![false; cfg.k];
    for &a in &assignments {
        used[a] = true;
    }
    let empty_clusters = used.iter().filter(|u| !**u).count();
    if empty_clusters > 0 {
        log::warn!("k-means left {empty_clusters} empty cluster(s)");
    }
    Ok(KmeansResult {
        iterations: history.len(),
        assignments,
        centers,
        objective: obj,
        restart,
        converged,
        history,
        empty_clusters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        let d = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        FeatureMatrix::new(rows.concat(), d, ids, "t").unwrap()
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for i in 0..200 {
            let c = i % 2;
            truth.push(c);
            rows.push((0..5).map(|_| c as f64 * 20.0 + noise.sample(&mut rng)).collect());
        }
        let r = kmeans(&fm(&rows), &KmeansConfig::new(2, 1), Execution::Parallel).unwrap();
        let acc = crate::metrics::cluster_accuracy(&r.assignments, &truth).unwrap();
        assert_eq!(acc, 1.0);
        assert!(r.converged);
    }

    #[test]
    fn tiny_cases() {
        let x = fm(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let r = kmeans(&x, &KmeansConfig::new(2, 0), Execution::Sequential).unwrap();
        assert_ne!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.objective, 0.0);
        assert!(kmeans(&x, &KmeansConfig::new(3, 0), Execution::Sequential).is_err());
    }

    #[test]
    fn identical_rows_leave_empty_cluster() {
        let x = fm(&vec![vec![2.0, 2.0]; 5]);
        let r = kmeans(&x, &KmeansConfig::new(2, 0), Execution::Sequential).unwrap();
        assert_eq!(r.empty_clusters, 1);
        assert!(r.assignments.iter().all(|&a| a == r.assignments[0]));
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let x = fm(&rows);
        let cfg = KmeansConfig::new(3, 42);
        let a = kmeans(&x, &cfg, Execution::Parallel).unwrap();
        let b = kmeans(&x, &cfg, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        for w in a.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }
}
