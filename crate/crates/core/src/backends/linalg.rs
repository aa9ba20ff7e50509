//! Small dense symmetric linear algebra in f64.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Off-diagonal tolerance of the Jacobi iteration, relative to the Frobenius norm.
pub const JACOBI_TOL: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    /// Sorted in decreasing order.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector of `values[i]`.
    pub vectors: Matrix<f64>,
}

fn check_square(a: &Matrix<f64>, context: &'static str) -> Result<usize> {
    if a.rows() != a.cols() {
        return Err(Error::Shape {
            context,
            expected: a.rows(),
            found: a.cols(),
        });
    }
    Ok(a.rows())
}

/// Cyclic Jacobi eigensolver for symmetric `a` (only symmetric input is meaningful).
pub fn sym_eigen(a: &Matrix<f64>) -> Result<SymEigen> {
    let n = check_square(a, "symmetric eigenproblem")?;
    if !a.is_finite() {
        return Err(Error::NonFinite("eigenproblem input".into()));
    }
    let mut m = a.clone();
    let mut v = Matrix::<f64>::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum::<f64>();
        if Float::sqrt(off) <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + Float::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / Float::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    if !converged {
        return Err(Error::Degenerate(format!(
            "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok(SymEigen { values, vectors })
}

/// Lower-triangular `L` with `a = L Lᵀ`.
pub fn cholesky(a: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = check_square(a, "Cholesky factorization")?;
    let mut l = Matrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return Err(Error::Degenerate(format!(
                        "matrix is not positive definite (pivot {i} = {s:e})"
                    )));
                }
                l.set(i, i, Float::sqrt(s));
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_substitute(l: &Matrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * y[k];
        }
        y[i] = s / l.get(i, i);
    }
    y
}

/// `log N(x; 0, L Lᵀ)` given the Cholesky factor `L`.
pub fn gaussian_log_density(l: &Matrix<f64>, x: &[f64]) -> f64 {
    let y = forward_substitute(l, x);
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let log_det: f64 = (0..l.rows()).map(|i| Float::ln(l.get(i, i))).sum::<f64>() * 2.0;
    -0.5 * (quad + log_det + l.rows() as f64 * Float::ln(2.0 * core::f64::consts::PI))
}

/// Column means of `x`.
pub fn mean_rows(x: &Matrix<f64>) -> Vec<f64> {
    x.col_means()
}

/// Scatter `Σ (x_i − mean)(x_i − mean)ᵀ` over the rows of `x`.
pub fn scatter(x: &Matrix<f64>, mean: &[f64]) -> Matrix<f64> {
    let d = x.cols();
    let mut s = Matrix::<f64>::zeros(d, d);
    let mut c = vec![0.0; d];
    for i in 0..x.rows() {
        for (cj, (&v, &m)) in c.iter_mut().zip(x.row(i).iter().zip(mean)) {
            *cj = v - m;
        }
        for a in 0..d {
            let row = s.row_mut(a);
            for b in 0..d {
                row[b] += c[a] * c[b];
            }
        }
    }
    s
}

/// `(a + aᵀ) / 2`
pub fn symmetrize(a: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| 0.5 * (a.get(i, j) + a.get(j, i)))
}

/// `V diag(f(λ)) Vᵀ`
pub fn spectral_map(e: &SymEigen, f: impl Fn(f64) -> f64) -> Matrix<f64> {
    let n = e.values.len();
    let fv: Vec<f64> = e.values.iter().map(|&l| f(l)).collect();
    Matrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| e.vectors.get(i, k) * fv[k] * e.vectors.get(j, k)).sum()
    })
}

/// `m · v`
pub fn mat_vec(m: &Matrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&a)
    }

    #[test]
    fn eigen_reconstructs_and_is_orthonormal() {
        for (n, seed) in [(1, 0), (2, 1), (5, 2), (12, 3)] {
            let a = random_sym(n, seed);
            let e = sym_eigen(&a).unwrap();
            let back = spectral_map(&e, |l| l);
            for (x, y) in back.data().iter().zip(a.data()) {
                assert!((x - y).abs() < 1e-9);
            }
            let vtv = e.vectors.t_matmul(&e.vectors).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((vtv.get(i, j) - want).abs() < 1e-9);
                }
            }
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn eigen_of_known_matrix() {
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-12);
        assert!((e.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_factor_and_density() {
        let a = Matrix::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        let llt = l.matmul(&l.transpose()).unwrap();
        for (x, y) in llt.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        // Independent closed form for a 2-D Gaussian.
        let x = [0.5, -1.0];
        let det = 4.0 * 3.0 - 2.0 * 2.0;
        let quad = (3.0 * x[0] * x[0] - 2.0 * 2.0 * x[0] * x[1] + 4.0 * x[1] * x[1]) / det;
        let want = -0.5 * (quad + f64::ln(det) + 2.0 * f64::ln(2.0 * core::f64::consts::PI));
        assert!((gaussian_log_density(&l, &x) - want).abs() < 1e-12);
        assert!(cholesky(&Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap()).is_err());
    }
}
