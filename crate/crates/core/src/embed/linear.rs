//! PCA and RBF kernel PCA encoders.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use wlembed_nn::Tensor;

use crate::error::{CoreError, Result};
use crate::training::seeded;

/// Eigenpairs of a symmetric matrix, eigenvalues descending. Each
/// eigenvector's largest-magnitude entry is made positive.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            orient(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive (first one on ties).
pub fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` principal directions, each of length `p`.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Share of total variance captured by each kept component.
    pub explained_variance_ratio: Vec<f64>,
}

/// Mean-centered PCA keeping the top `k` covariance eigenvectors.
pub fn fit_pca(x: &Tensor, k: usize) -> Result<PcaModel> {
    let (n, p) = (x.rows(), x.cols());
    if k == 0 || k > n.min(p) {
        return Err(CoreError::invalid(format!("pca: k={k} must lie in 1..={}", n.min(p))));
    }
    let mean = x.column_means().into_data();
    let centered = DMatrix::from_fn(n, p, |i, j| x.get(i, j) - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    let (values, vectors) = sym_eigen_desc(&cov);
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let explained = values[..k]
        .iter()
        .map(|v| if total > 0.0 { v.max(0.0) / total } else { 0.0 })
        .collect();
    Ok(PcaModel {
        mean,
        components: vectors[..k].to_vec(),
        eigenvalues: values[..k].to_vec(),
        explained_variance_ratio: explained,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, zi) in self.components.iter().zip(z) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += zi * ci;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpcaModel {
    pub gamma: f64,
    /// Training points the kernel is evaluated against.
    pub points: Vec<Vec<f64>>,
    /// `k` coefficient vectors over the training points (eigenvectors of
    /// the centered kernel divided by the square root of their eigenvalue).
    pub alphas: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Column means of the uncentered training kernel.
    pub kernel_col_means: Vec<f64>,
    pub kernel_mean: f64,
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

/// Uncentered RBF kernel matrix of the rows of `x`.
pub fn rbf_kernel(points: &[Vec<f64>], gamma: f64) -> DMatrix<f64> {
    let m = points.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf(gamma, &points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Kernel PCA with an RBF kernel. When `x` has more than `max_points`
/// rows a seeded subsample is used. Components with non-positive
/// eigenvalues are dropped with a warning, reducing `k`.
pub fn fit_kpca(x: &Tensor, k: usize, gamma: f64, max_points: usize, seed: u64) -> Result<KpcaModel> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(CoreError::invalid(format!("kpca: k={k} must lie in 1..={n}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(CoreError::invalid("kpca: gamma must be positive"));
    }
    let mut rows: Vec<usize> = if n > max_points {
        let mut idx = sample(&mut seeded(seed, 77), n, max_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    rows.dedup();
    let points: Vec<Vec<f64>> = rows.iter().map(|&r| x.row(r).to_vec()).collect();
    let m = points.len();
    let kernel = rbf_kernel(&points, gamma);
    let col_means: Vec<f64> = (0..m).map(|j| kernel.column(j).sum() / m as f64).collect();
    let total_mean = col_means.iter().sum::<f64>() / m as f64;
    let centered = DMatrix::from_fn(m, m, |i, j| kernel[(i, j)] - col_means[i] - col_means[j] + total_mean);
    let (values, vectors) = sym_eigen_desc(&centered);
    let tol = 1e-12 * values.first().copied().unwrap_or(0.0).abs().max(1.0);
    let mut alphas = Vec::new();
    let mut kept = Vec::new();
    for (lambda, v) in values.iter().zip(&vectors).take(k.min(m)) {
        if *lambda <= tol {
            log::warn!("kpca: skipping component with non-positive eigenvalue {lambda:e}");
            continue;
        }
        let s = lambda.sqrt();
        alphas.push(v.iter().map(|a| a / s).collect());
        kept.push(*lambda);
    }
    if alphas.is_empty() {
        return Err(CoreError::Numerical("kpca: no component with a positive eigenvalue".into()));
    }
    if alphas.len() < k {
        log::warn!("kpca: embedding dimension reduced from {k} to {}", alphas.len());
    }
    Ok(KpcaModel { gamma, points, alphas, eigenvalues: kept, kernel_col_means: col_means, kernel_mean: total_mean })
}

impl KpcaModel {
    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let kv: Vec<f64> = self.points.iter().map(|p| rbf(self.gamma, x, p)).collect();
        let mean = kv.iter().sum::<f64>() / kv.len() as f64;
        let centered: Vec<f64> = kv
            .iter()
            .zip(&self.kernel_col_means)
            .map(|(v, c)| v - mean - c + self.kernel_mean)
            .collect();
        self.alphas.iter().map(|a| a.iter().zip(&centered).map(|(x, y)| x * y).sum()).collect()
    }
}
