use alloc::vec;
use alloc::vec::Vec;

use super::params::{ParamGroup, ParamId, ParamStore};
use crate::matrix::Matrix;
use crate::real::Real;

/// Per-feature batch normalization, placed between the affine transform and
/// the activation of a hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Matrix<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Biased batch variance.
    pub batch_var: Vec<T>,
    pub used_batch_stats: bool,
}

impl BatchNorm {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Self {
        use alloc::format;
        BatchNorm {
            gamma: store.add(
                format!("{prefix}.bn.gamma"),
                Matrix::filled(1, dim, T::one()),
                ParamGroup::Main,
            ),
            beta: store.add(format!("{prefix}.bn.beta"), Matrix::zeros(1, dim), ParamGroup::Main),
            running_mean: store.add(
                format!("{prefix}.bn.running_mean"),
                Matrix::zeros(1, dim),
                ParamGroup::Buffer,
            ),
            running_var: store.add(
                format!("{prefix}.bn.running_var"),
                Matrix::filled(1, dim, T::one()),
                ParamGroup::Buffer,
            ),
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    /// Normalizes `z` with batch statistics (`use_batch_stats`) or running statistics.
    pub fn forward<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &Matrix<T>,
        use_batch_stats: bool,
    ) -> (Matrix<T>, BnCache<T>) {
        let (n, d) = (z.rows(), z.cols());
        let eps = T::of(self.epsilon);
        let (mean, var) = if use_batch_stats {
            let mean = z.col_means();
            let mut var = vec![T::zero(); d];
            for i in 0..n {
                for (j, v) in var.iter_mut().enumerate() {
                    let c = z.get(i, j) - mean[j];
                    *v += c * c;
                }
            }
            let nn = T::of(n.max(1) as f64);
            var.iter_mut().for_each(|v| *v /= nn);
            (mean, var)
        } else {
            (
                store.get(self.running_mean).data().to_vec(),
                store.get(self.running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let gamma = store.get(self.gamma).data();
        let beta = store.get(self.beta).data();
        let mut xhat = Matrix::zeros(n, d);
        let mut y = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                let h = (z.get(i, j) - mean[j]) * inv_std[j];
                xhat.set(i, j, h);
                y.set(i, j, gamma[j] * h + beta[j]);
            }
        }
        (
            y,
            BnCache {
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                used_batch_stats: use_batch_stats,
            },
        )
    }

    /// Returns `dz`; writes `dgamma`, `dbeta` when requested.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &BnCache<T>,
        dy: &Matrix<T>,
        param_grads: Option<(&mut Matrix<T>, &mut Matrix<T>)>,
    ) -> Matrix<T> {
        let (n, d) = (dy.rows(), dy.cols());
        let gamma = store.get(self.gamma).data();
        if let Some((dgamma, dbeta)) = param_grads {
            let (dg, db) = (dgamma.data_mut(), dbeta.data_mut());
            for i in 0..n {
                for j in 0..d {
                    dg[j] += dy.get(i, j) * cache.xhat.get(i, j);
                    db[j] += dy.get(i, j);
                }
            }
        }
        let mut dz = Matrix::zeros(n, d);
        if cache.used_batch_stats {
            let nn = T::of(n as f64);
            let mut sum_dx = vec![T::zero(); d];
            let mut sum_dx_xhat = vec![T::zero(); d];
            for i in 0..n {
                for j in 0..d {
                    let dxh = dy.get(i, j) * gamma[j];
                    sum_dx[j] += dxh;
                    sum_dx_xhat[j] += dxh * cache.xhat.get(i, j);
                }
            }
            for i in 0..n {
                for j in 0..d {
                    let dxh = dy.get(i, j) * gamma[j];
                    let v = cache.inv_std[j] / nn * (nn * dxh - sum_dx[j] - cache.xhat.get(i, j) * sum_dx_xhat[j]);
                    dz.set(i, j, v);
                }
            }
        } else {
            for i in 0..n {
                for j in 0..d {
                    dz.set(i, j, dy.get(i, j) * gamma[j] * cache.inv_std[j]);
                }
            }
        }
        dz
    }

    /// Folds the batch statistics of a training-mode forward into the running estimates.
    pub fn update_running<T: Real>(&self, store: &mut ParamStore<T>, cache: &BnCache<T>, batch_rows: usize) {
        if !cache.used_batch_stats {
            return;
        }
        let m = T::of(self.momentum);
        let unbias = if batch_rows > 1 {
            T::of(batch_rows as f64 / (batch_rows - 1) as f64)
        } else {
            T::one()
        };
        let rm = store.get_mut(self.running_mean).data_mut();
        for (r, &b) in rm.iter_mut().zip(&cache.batch_mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        let rv = store.get_mut(self.running_var).data_mut();
        for (r, &b) in rv.iter_mut().zip(&cache.batch_var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
    }
}
