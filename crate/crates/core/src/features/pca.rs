//! Principal component analysis via symmetric eigendecomposition.
//!
//! When `D <= N` the `D x D` covariance is decomposed directly. Otherwise the
//! `N x N` Gram matrix of the centered rows is decomposed and its eigenvectors
//! are mapped back through `Xcᵀ`, which yields the same leading components at
//! a fraction of the cost for wide inputs (6373-d audio over ~1.5k turns).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 rows to fit PCA, got {0}")]
    TooFewRows(usize),
    #[error("n_components = {requested} out of range (1..={max})")]
    ComponentsOutOfRange { requested: usize, max: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("expected a vector of dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Orthonormal rows, `n_components x D`.
    pub components: Vec<Vec<f64>>,
    /// Non-increasing, non-negative.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// Conversation ids the model was fit on.
    #[serde(default)]
    pub fitted_on: BTreeSet<String>,
}

impl Pca {
    /// Fits on the rows of `x` (`N x D`), keeping the top `n_components`.
    pub fn fit(x: &DMatrix<f64>, n_components: usize) -> Result<Pca, PcaError> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(PcaError::TooFewRows(n));
        }
        let max = (n - 1).min(d);
        if n_components == 0 || n_components > max {
            return Err(PcaError::ComponentsOutOfRange {
                requested: n_components,
                max,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PcaError::NonFinite);
        }

        let mean: DVector<f64> = x.row_mean().transpose();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mean.transpose();
        }
        let denom = (n - 1) as f64;
        let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / denom;

        let (values, vectors) = if d <= n {
            let cov = xc.tr_mul(&xc) / denom;
            top_eigen(cov, n_components)
        } else {
            let gram = &xc * xc.transpose() / denom;
            let (values, u) = top_eigen(gram, n_components);
            // v = Xcᵀ u / sqrt(λ (N-1)); directions with λ ≈ 0 are completed
            // orthonormally below.
            let mut v = xc.tr_mul(&u);
            let scale = values.iter().copied().fold(0.0, f64::max);
            for (j, &lambda) in values.iter().enumerate() {
                let mut col = v.column_mut(j);
                if lambda > scale * 1e-12 && lambda > 0.0 {
                    col /= (lambda * denom).sqrt();
                } else {
                    col.fill(0.0);
                }
            }
            (values, v)
        };

        let mut components: Vec<Vec<f64>> = Vec::with_capacity(n_components);
        for j in 0..n_components {
            let mut c: Vec<f64> = vectors.column(j).iter().copied().collect();
            if norm(&c) < 0.5 {
                c = complete_basis(&components, d);
            }
            fix_sign(&mut c);
            components.push(c);
        }

        Ok(Pca {
            mean: mean.iter().copied().collect(),
            components,
            explained_variance: values.iter().map(|&v| v.max(0.0)).collect(),
            total_variance,
            fitted_on: BTreeSet::new(),
        })
    }

    /// Fits on a list of equally sized rows.
    pub fn fit_rows(rows: &[&[f64]], n_components: usize) -> Result<Pca, PcaError> {
        let d = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(PcaError::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let x = DMatrix::from_row_iterator(rows.len(), d, rows.iter().flat_map(|r| r.iter().copied()));
        Pca::fit(&x, n_components)
    }

    pub fn with_fitted_on<I, S>(mut self, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.fitted_on = ids.into_iter().map(Into::into).collect();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// `components · (x − mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, PcaError> {
        if x.len() != self.mean.len() {
            return Err(PcaError::DimensionMismatch {
                expected: self.mean.len(),
                found: x.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    /// `mean + componentsᵀ · z`.
    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += zi * ci;
            }
        }
        out
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance == 0.0 {
            return 1.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }
}

/// Top-`k` eigenpairs of a symmetric matrix, eigenvalues descending.
fn top_eigen(m: DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    // Stable sort keeps the solver's order among exact ties.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.truncate(k);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest-magnitude entry made positive (first index wins ties).
fn fix_sign(c: &mut [f64]) {
    let mut best = 0;
    for (i, v) in c.iter().enumerate() {
        if v.abs() > c[best].abs() {
            best = i;
        }
    }
    if c[best] < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
    }
}

/// A unit vector orthogonal to `basis`, from Gram-Schmidt over the standard
/// basis.
fn complete_basis(basis: &[Vec<f64>], d: usize) -> Vec<f64> {
    (0..d)
        .find_map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            for _ in 0..2 {
                for b in basis {
                    let dot: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
                    e.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let n = norm(&e);
            (n > 1e-6).then(|| e.into_iter().map(|x| x / n).collect())
        })
        .expect("basis has fewer than d vectors")
}
