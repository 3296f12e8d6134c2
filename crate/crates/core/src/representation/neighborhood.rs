//! Compact neighborhood-graph layout in the style of UMAP.
//!
//! The rows are first reduced with PCA, then a k-nearest-neighbor graph with
//! fuzzy membership weights is built and laid out in 2-D by stochastic
//! gradient descent with attractive moves along edges and repulsive moves
//! against random samples. The layout is seeded from the leading principal
//! components and all sampling draws from one seeded stream.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{pca, Reducer2d};
use super::FeatureMatrix;
use crate::error::Result;
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodReducer {
    pub n_neighbors: usize,
    /// Curve parameters of the low-dimensional similarity
    /// `1 / (1 + a·d^(2b))`; the defaults correspond to min_dist = 0.1.
    pub a: f64,
    pub b: f64,
    pub n_epochs: usize,
    pub negative_samples: usize,
    /// Dimensions kept by the PCA pre-reduction.
    pub pca_dims: usize,
}

impl Default for NeighborhoodReducer {
    fn default() -> Self {
        NeighborhoodReducer {
            n_neighbors: 15,
            a: 1.576_943_46,
            b: 0.895_060_6,
            n_epochs: 200,
            negative_samples: 5,
            pca_dims: 50,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// k nearest neighbors of every row (self excluded), ascending distance.
fn knn(rows: &[Vec<f64>], k: usize, exec: Execution) -> Vec<Vec<(usize, f64)>> {
    exec.map_range(rows.len(), |i| {
        let mut d: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(j, r)| (j, dist(&rows[i], r)))
            .collect();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if d.len() > k {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_by(cmp);
        d
    })
}

/// Membership weights `exp(-(d - rho)/sigma)` with sigma chosen so they sum
/// to log2(k).
fn memberships(neigh: &[(usize, f64)]) -> Vec<f64> {
    let rho = neigh.iter().map(|p| p.1).find(|&d| d > 0.0).unwrap_or(0.0);
    let target = (neigh.len().max(2) as f64).log2();
    let total = |sigma: f64| -> f64 {
        neigh
            .iter()
            .map(|p| (-(p.1 - rho).max(0.0) / sigma).exp())
            .sum()
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut sigma = 1.0;
    for _ in 0..64 {
        let s = total(sigma);
        if (s - target).abs() < 1e-5 {
            break;
        }
        if s > target {
            hi = sigma;
            sigma = (lo + hi) / 2.0;
        } else {
            lo = sigma;
            sigma = if hi.is_finite() { (lo + hi) / 2.0 } else { sigma * 2.0 };
        }
    }
    let sigma = sigma.max(1e-3 * neigh.iter().map(|p| p.1).sum::<f64>() / neigh.len().max(1) as f64);
    neigh
        .iter()
        .map(|p| (-(p.1 - rho).max(0.0) / sigma.max(f64::MIN_POSITIVE)).exp())
        .collect()
}

impl NeighborhoodReducer {
    fn graph(&self, rows: &[Vec<f64>], exec: Execution) -> Vec<(usize, usize, f64)> {
        let k = self.n_neighbors.min(rows.len() - 1).max(1);
        let neighbors = knn(rows, k, exec);
        let mut directed: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, neigh) in neighbors.iter().enumerate() {
            for (&(j, _), w) in neigh.iter().zip(memberships(neigh)) {
                directed.insert((i, j), w);
            }
        }
        // fuzzy union of the two directions
        let mut edges = Vec::new();
        for (&(i, j), &w) in &directed {
            if i < j {
                let v = directed.get(&(j, i)).copied().unwrap_or(0.0);
                edges.push((i, j, w + v - w * v));
            } else if !directed.contains_key(&(j, i)) {
                edges.push((j, i, w));
            }
        }
        edges.retain(|e| e.2 > 0.0);
        edges
    }

    fn layout(&self, init: Vec<[f64; 2]>, edges: &[(usize, usize, f64)], seed: u64) -> Vec<[f64; 2]> {
        let n = init.len();
        let mut y = init;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_w = edges.iter().map(|e| e.2).fold(0.0, f64::max);
        let (a, b) = (self.a, self.b);
        let clip = |v: f64| v.clamp(-4.0, 4.0);
        for epoch in 0..self.n_epochs {
            let alpha = 1.0 - epoch as f64 / self.n_epochs as f64;
            for &(i, j, w) in edges {
                if rng.random::<f64>() * max_w > w {
                    continue;
                }
                let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                if d2 > 0.0 {
                    let coef = -2.0 * a * b * d2.powf(b - 1.0) / (1.0 + a * d2.powf(b));
                    for c in 0..2 {
                        let g = clip(coef * (y[i][c] - y[j][c])) * alpha;
                        y[i][c] += g;
                        y[j][c] -= g;
                    }
                }
                for _ in 0..self.negative_samples {
                    let k = rng.random_range(0..n);
                    if k == i {
                        continue;
                    }
                    let d2 = (y[i][0] - y[k][0]).powi(2) + (y[i][1] - y[k][1]).powi(2);
                    let coef = 2.0 * b / ((0.001 + d2) * (1.0 + a * d2.powf(b)));
                    for c in 0..2 {
                        let g = if d2 > 0.0 { clip(coef * (y[i][c] - y[k][c])) } else { 4.0 };
                        y[i][c] += g * alpha;
                    }
                }
            }
        }
        y
    }
}

impl Reducer2d for NeighborhoodReducer {
    fn name(&self) -> &str {
        "neighborhood_umap_style"
    }

    fn params(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain struct serializes")
    }

    fn reduce(&self, x: &FeatureMatrix, seed: u64, exec: Execution) -> Result<Vec<[f64; 2]>> {
        let dims = self.pca_dims.min(x.d()).min(x.n());
        let p = pca(x, dims)?;
        let rows = p.project(x);
        let init_scale = rows
            .iter()
            .flat_map(|r| r.iter().take(2))
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let s = if init_scale > 0.0 { 10.0 / init_scale } else { 1.0 };
        let mut jitter = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5);
        let init: Vec<[f64; 2]> = rows
            .iter()
            .map(|r| {
                let e = [jitter.random::<f64>() * 1e-4, jitter.random::<f64>() * 1e-4];
                [r[0] * s + e[0], r.get(1).copied().unwrap_or(0.0) * s + e[1]]
            })
            .collect();
        let edges = self.graph(&rows, exec);
        Ok(self.layout(init, &edges, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representation::{embed_2d, EmbedMethod};

    fn blobs(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n)
            .flat_map(|i| {
                let c = (i % 2) as f64 * 6.0;
                (0..8).map(|_| c + rng.random::<f64>()).collect::<Vec<_>>()
            })
            .collect();
        FeatureMatrix::new(data, 8, (0..n).map(|i| i.to_string()).collect(), "b").unwrap()
    }

    #[test]
    fn seeded_finite_and_separating() {
        let x = blobs(60, 1);
        let e1 = embed_2d(&x, 7, EmbedMethod::NeighborhoodUmapStyle, Execution::Parallel).unwrap();
        let e2 = embed_2d(&x, 7, EmbedMethod::NeighborhoodUmapStyle, Execution::Sequential).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(e1.coords.len(), 60);
        assert!(e1.coords.iter().flatten().all(|v| v.is_finite()));
        let e3 = embed_2d(&x, 8, EmbedMethod::NeighborhoodUmapStyle, Execution::Sequential).unwrap();
        assert_ne!(e1.coords, e3.coords);
        // nearest embedded neighbor shares the blob
        let c = &e1.coords;
        let mut agree = 0;
        for i in 0..60 {
            let j = (0..60)
                .filter(|&j| j != i)
                .min_by(|&a, &b| {
                    let da = (c[a][0] - c[i][0]).powi(2) + (c[a][1] - c[i][1]).powi(2);
                    let db = (c[b][0] - c[i][0]).powi(2) + (c[b][1] - c[i][1]).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            agree += (i % 2 == j % 2) as usize;
        }
        assert!(agree >= 57, "{agree}");
    }

    #[test]
    fn memberships_sum_to_log2_k() {
        let neigh: Vec<(usize, f64)> = (0..15).map(|j| (j, 1.0 + j as f64 * 0.3)).collect();
        let w = memberships(&neigh);
        assert!((w.iter().sum::<f64>() - 15f64.log2()).abs() < 1e-3);
        assert_eq!(w[0], 1.0);
    }
}
