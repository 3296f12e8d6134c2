use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::neighborhood::NeighborhoodReducer;
use super::FeatureMatrix;
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Above this width the covariance is not formed explicitly.
const EXACT_PCA_MAX_D: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMethod {
    NeighborhoodUmapStyle,
    Pca,
}

/// Interchangeable 2-D reducer.
pub trait Reducer2d: Send + Sync {
    fn name(&self) -> &str;
    /// Hyperparameters, recorded next to the coordinates.
    fn params(&self) -> serde_json::Value;
    fn reduce(&self, x: &FeatureMatrix, seed: u64, exec: Execution) -> Result<Vec<[f64; 2]>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub method: String,
    pub params: serde_json::Value,
    pub seed: u64,
    pub coords: Vec<[f64; 2]>,
}

/// Principal components of the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm components, largest variance first. The largest-magnitude
    /// loading of each is positive.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component (divisor n).
    pub variance: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &FeatureMatrix) -> Vec<Vec<f64>> {
        (0..x.n())
            .map(|i| {
                let row = x.row(i);
                self.components
                    .iter()
                    .map(|c| {
                        c.iter()
                            .zip(row)
                            .zip(&self.mean)
                            .map(|((w, v), m)| w * (v - m))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }
}

fn column_mean(x: &FeatureMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; x.d()];
    for i in 0..x.n() {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= x.n() as f64);
    mean
}

fn centered(x: &FeatureMatrix, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.n(), x.d(), |i, j| x.row(i)[j] - mean[j])
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigenpairs of a symmetric matrix, descending eigenvalue, top `c`.
fn top_eigen(m: DMatrix<f64>, c: usize) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(c)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors.column(j).iter().cloned().collect()))
        .collect()
}

/// Block subspace iteration on the covariance without forming it.
fn subspace_eigen(xc: &DMatrix<f64>, c: usize) -> Vec<(f64, Vec<f64>)> {
    let (n, d) = xc.shape();
    let b = (c + 6).min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DMatrix::from_fn(d, b, |_, _| rng.random::<f64>() - 0.5)
        .qr()
        .q();
    let mut prev = vec![0.0; c];
    for _ in 0..1000 {
        let z = xc.transpose() * (xc * &q) / n as f64;
        let vals: Vec<f64> = top_eigen(q.transpose() * &z, c).into_iter().map(|(v, _)| v).collect();
        q = z.qr().q();
        let done = vals
            .iter()
            .zip(&prev)
            .all(|(a, b)| (a - b).abs() <= 1e-13 * a.abs().max(1e-300));
        prev = vals;
        if done {
            break;
        }
    }
    let z = xc.transpose() * (xc * &q) / n as f64;
    top_eigen(q.transpose() * z, c)
        .into_iter()
        .map(|(val, v)| {
            let full = &q * DMatrix::from_column_slice(b, 1, &v);
            (val, full.iter().cloned().collect())
        })
        .collect()
}

/// Top `c` principal components. Exact symmetric eigendecomposition for
/// `d <= 256`, converged block subspace iteration otherwise.
pub fn pca(x: &FeatureMatrix, c: usize) -> Result<Pca> {
    if c == 0 || c > x.d().min(x.n()) {
        return Err(Error::invalid(format!(
            "cannot take {c} components of a {}×{} matrix",
            x.n(),
            x.d()
        )));
    }
    let mean = column_mean(x);
    let xc = centered(x, &mean);
    let pairs = if x.d() <= EXACT_PCA_MAX_D {
        top_eigen(xc.transpose() * &xc / x.n() as f64, c)
    } else {
        subspace_eigen(&xc, c)
    };
    let mut components = Vec::with_capacity(c);
    let mut variance = Vec::with_capacity(c);
    for (val, mut v) in pairs {
        fix_sign(&mut v);
        components.push(v);
        variance.push(val.max(0.0));
    }
    Ok(Pca {
        mean,
        components,
        variance,
    })
}

struct PcaReducer;

impl Reducer2d for PcaReducer {
    fn name(&self) -> &str {
        "pca"
    }

    fn params(&self) -> serde_json::Value {
        serde_json::json!({ "components": 2 })
    }

    fn reduce(&self, x: &FeatureMatrix, _seed: u64, _exec: Execution) -> Result<Vec<[f64; 2]>> {
        let p = pca(x, 2.min(x.d()))?;
        Ok(p
            .project(x)
            .into_iter()
            .map(|r| [r[0], r.get(1).copied().unwrap_or(0.0)])
            .collect())
    }
}

/// 2-D coordinates for a scatter plot of the rows.
pub fn embed_2d(
    x: &FeatureMatrix,
    seed: u64,
    method: EmbedMethod,
    exec: Execution,
) -> Result<Embedding> {
    if x.n() < 3 {
        return Err(Error::invalid("embedding needs at least 3 rows"));
    }
    let reducer: Box<dyn Reducer2d> = match method {
        EmbedMethod::Pca => Box::new(PcaReducer),
        EmbedMethod::NeighborhoodUmapStyle => Box::new(NeighborhoodReducer::default()),
    };
    embed_with(reducer.as_ref(), x, seed, exec)
}

pub fn embed_with(
    reducer: &dyn Reducer2d,
    x: &FeatureMatrix,
    seed: u64,
    exec: Execution,
) -> Result<Embedding> {
    let coords = reducer.reduce(x, seed, exec)?;
    if coords.len() != x.n() || coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "reducer {} returned invalid coordinates",
            reducer.name()
        )));
    }
    Ok(Embedding {
        method: reducer.name().to_string(),
        params: reducer.params(),
        seed,
        coords,
    })
}

/// CSV with columns `record_id,x,y,label,cluster`.
pub fn write_embedding_csv(
    path: &Path,
    record_ids: &[String],
    coords: &[[f64; 2]],
    labels: &[ClassLabel],
    clusters: &[usize],
) -> Result<()> {
    let n = record_ids.len();
    if coords.len() != n || labels.len() != n || clusters.len() != n {
        return Err(Error::invalid("embedding export columns differ in length"));
    }
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["record_id", "x", "y", "label", "cluster"])?;
    for i in 0..n {
        w.write_record([
            record_ids[i].clone(),
            coords[i][0].to_string(),
            coords[i][1].to_string(),
            labels[i].as_str().to_string(),
            clusters[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        let d = rows[0].len();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        FeatureMatrix::new(rows.concat(), d, ids, "t").unwrap()
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn planar_data_keeps_pairwise_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // points on a random 2-D plane inside 6-D
        let (u, v): (Vec<f64>, Vec<f64>) = ((0..6).map(|_| rng.random::<f64>()).collect(), (0..6).map(|_| rng.random::<f64>()).collect());
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| {
                let (a, b) = (rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0);
                (0..6).map(|j| 1.0 + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let x = fm(&rows);
        let e = embed_2d(&x, 0, EmbedMethod::Pca, Execution::Sequential).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let d0 = dist(&rows[i], &rows[j]);
                let d1 = dist(&e.coords[i], &e.coords[j]);
                assert!((d0 - d1).abs() < 1e-9, "{d0} vs {d1}");
            }
        }
    }

    #[test]
    fn two_d_input_is_rotation_of_centered_input() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.0, 0.5], vec![4.0, 4.0]];
        let x = fm(&rows);
        let e = embed_2d(&x, 0, EmbedMethod::Pca, Execution::Sequential).unwrap();
        let var = |pts: &[Vec<f64>]| -> f64 {
            let n = pts.len() as f64;
            (0..2)
                .map(|j| {
                    let m = pts.iter().map(|p| p[j]).sum::<f64>() / n;
                    pts.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>()
                })
                .sum()
        };
        let out: Vec<Vec<f64>> = e.coords.iter().map(|c| c.to_vec()).collect();
        assert!((var(&rows) - var(&out)).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_have_zero_second_coordinate() {
        let x = fm(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![3.0, 6.0, 9.0]]);
        let e = embed_2d(&x, 0, EmbedMethod::Pca, Execution::Sequential).unwrap();
        assert!(e.coords.iter().all(|c| c[1].abs() < 1e-8));
        assert!(e.coords.iter().any(|c| c[0].abs() > 1.0));
    }

    #[test]
    fn sign_convention_is_stable() {
        let rows = vec![vec![1.0, 0.1], vec![-2.0, 0.0], vec![3.0, -0.2], vec![0.5, 0.3]];
        let p = pca(&fm(&rows), 2).unwrap();
        for c in &p.components {
            let max = c.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
        let neg: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        assert_eq!(pca(&fm(&neg), 2).unwrap().components, p.components);
    }

    #[test]
    fn subspace_iteration_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 300;
        let scales: Vec<f64> = (0..d).map(|j| 1.0 / (1.0 + j as f64)).collect();
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|_| scales.iter().map(|s| s * (rng.random::<f64>() - 0.5) * 10.0).collect())
            .collect();
        let x = fm(&rows);
        let fast = pca(&x, 2).unwrap();
        let mean = column_mean(&x);
        let exact = top_eigen(centered(&x, &mean).transpose() * centered(&x, &mean) / 80.0, 2);
        for (k, (val, mut v)) in exact.into_iter().enumerate() {
            fix_sign(&mut v);
            assert!((fast.variance[k] - val).abs() < 1e-9 * val);
            for (a, b) in fast.components[k].iter().zip(&v) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn csv_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        write_embedding_csv(
            &p,
            &["a".into(), "b".into()],
            &[[0.0, 1.0], [2.0, 3.0]],
            &[ClassLabel::Healthy, ClassLabel::Pneumonia],
            &[1, 0],
        )
        .unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "record_id,x,y,label,cluster");
        assert_eq!(lines[2], "b,2,3,pneumonia,0");
    }
}
