use alloc::vec::Vec;

use super::linalg::{cholesky, gaussian_log_density, spectral_map, sym_eigen, symmetrize};
use super::projection::{group_rows, regularize, total_variance, within_class};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Two-covariance model: `x = μ + y + ε` with speaker factor `y ~ N(0, B)`
/// and residual `ε ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PldaModel {
    pub mu: Vec<f64>,
    /// Symmetric positive semidefinite.
    pub between_cov: Matrix<f64>,
    /// Symmetric positive definite.
    pub within_cov: Matrix<f64>,
    /// Ridge added to a singular within-class covariance, 0 when none was needed.
    pub ridge: f64,
    same_chol: Matrix<f64>,
    diff_chol: Matrix<f64>,
}

impl PldaModel {
    /// Builds a model from explicit parameters, validating definiteness.
    pub fn new(mu: Vec<f64>, between_cov: Matrix<f64>, within_cov: Matrix<f64>) -> Result<Self> {
        let d = mu.len();
        for (m, ctx) in [
            (&between_cov, "PLDA between covariance"),
            (&within_cov, "PLDA within covariance"),
        ] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::Shape {
                    context: ctx,
                    expected: d,
                    found: m.rows(),
                });
            }
        }
        let total = Matrix::from_fn(d, d, |i, j| between_cov.get(i, j) + within_cov.get(i, j));
        let same = Matrix::from_fn(2 * d, 2 * d, |i, j| {
            if (i < d) == (j < d) {
                total.get(i % d, j % d)
            } else {
                between_cov.get(i % d, j % d)
            }
        });
        let diff = Matrix::from_fn(2 * d, 2 * d, |i, j| {
            if (i < d) == (j < d) {
                total.get(i % d, j % d)
            } else {
                0.0
            }
        });
        cholesky(&within_cov)?;
        Ok(PldaModel {
            mu,
            between_cov,
            within_cov,
            ridge: 0.0,
            same_chol: cholesky(&same)?,
            diff_chol: cholesky(&diff)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Moment estimate: `W` is the pooled within-class covariance, `B` the
/// covariance of class means minus the within-class share `W / n̄`
/// (harmonic-mean class size), clipped to be positive semidefinite.
pub fn plda_fit(x: &Matrix<f64>, labels: &[usize]) -> Result<PldaModel> {
    let groups = group_rows(x, labels)?;
    let d = x.cols();
    let (mut within, class_means) = within_class(x, &groups);
    let ridge = regularize(&mut within, total_variance(x, &x.col_means()))?;
    let c = class_means.len() as f64;
    let mu: Vec<f64> = (0..d)
        .map(|j| class_means.iter().map(|(m, _)| m[j]).sum::<f64>() / c)
        .collect();
    let mut between = Matrix::<f64>::zeros(d, d);
    for (m, _) in &class_means {
        for a in 0..d {
            for b in 0..d {
                let v = between.get(a, b) + (m[a] - mu[a]) * (m[b] - mu[b]) / (c - 1.0);
                between.set(a, b, v);
            }
        }
    }
    let inv_n = class_means.iter().map(|(_, n)| 1.0 / *n as f64).sum::<f64>() / c;
    for (b, w) in between.data_mut().iter_mut().zip(within.data()) {
        *b -= w * inv_n;
    }
    let eig = sym_eigen(&symmetrize(&between))?;
    let between = symmetrize(&spectral_map(&eig, |l| l.max(0.0)));
    let mut model = PldaModel::new(mu, between, within)?;
    model.ridge = ridge;
    Ok(model)
}

/// Log-likelihood ratio of "same speaker" against "different speakers".
pub fn plda_score(model: &PldaModel, enroll: &[f64], test: &[f64]) -> Result<f64> {
    let d = model.dim();
    for v in [enroll, test] {
        if v.len() != d {
            return Err(Error::Shape {
                context: "PLDA scoring input width",
                expected: d,
                found: v.len(),
            });
        }
    }
    let joint: Vec<f64> = enroll
        .iter()
        .chain(test)
        .zip(model.mu.iter().chain(&model.mu))
        .map(|(v, m)| v - m)
        .collect();
    Ok(gaussian_log_density(&model.same_chol, &joint) - gaussian_log_density(&model.diff_chol, &joint))
}
