use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use super::linalg::{mean_rows, scatter, spectral_map, sym_eigen, symmetrize};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `out_dim × in_dim`, orthonormal rows in decreasing explained variance.
    pub components: Matrix<f64>,
    /// Variance along each component.
    pub explained_variance: Vec<f64>,
    /// Set when the data span fewer than `out_dim` directions; the extra
    /// components are an arbitrary orthonormal completion.
    pub rank_deficient: bool,
}

impl PcaModel {
    pub fn out_dim(&self) -> usize {
        self.components.rows()
    }
}

pub fn pca_fit(x: &Matrix<f64>, out_dim: usize) -> Result<PcaModel> {
    let d = x.cols();
    if out_dim == 0 || out_dim > d {
        return Err(Error::InvalidConfig(format!(
            "PCA output dimension {out_dim} must be in 1..={d}"
        )));
    }
    if x.rows() < out_dim {
        return Err(Error::Degenerate(format!(
            "PCA needs at least {out_dim} rows, got {}",
            x.rows()
        )));
    }
    let mean = mean_rows(x);
    let mut cov = scatter(x, &mean);
    let n = x.rows() as f64;
    cov.data_mut().iter_mut().for_each(|v| *v /= n);
    let eig = sym_eigen(&cov)?;
    let top = eig.values[0].max(0.0);
    let rank = eig.values.iter().filter(|&&l| l > RANK_TOL * top && l > 0.0).count();
    let components = Matrix::from_fn(out_dim, d, |i, j| eig.vectors.get(j, i));
    Ok(PcaModel {
        mean,
        components,
        explained_variance: eig.values[..out_dim].iter().map(|&l| l.max(0.0)).collect(),
        rank_deficient: rank < out_dim,
    })
}

fn project(x: &Matrix<f64>, mean: &[f64], proj: &Matrix<f64>) -> Result<Matrix<f64>> {
    if x.cols() != proj.cols() {
        return Err(Error::Shape {
            context: "projection input width",
            expected: proj.cols(),
            found: x.cols(),
        });
    }
    Ok(Matrix::from_fn(x.rows(), proj.rows(), |i, k| {
        x.row(i)
            .iter()
            .zip(mean)
            .zip(proj.row(k))
            .map(|((v, m), p)| (v - m) * p)
            .sum()
    }))
}

pub fn pca_apply(model: &PcaModel, x: &Matrix<f64>) -> Result<Matrix<f64>> {
    project(x, &model.mean, &model.components)
}

/// Maps projected coordinates back to the input space.
pub fn pca_inverse(model: &PcaModel, y: &Matrix<f64>) -> Result<Matrix<f64>> {
    if y.cols() != model.out_dim() {
        return Err(Error::Shape {
            context: "PCA coordinates width",
            expected: model.out_dim(),
            found: y.cols(),
        });
    }
    let mut out = y.matmul(&model.components)?;
    out.add_row_vector(&model.mean);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub mean: Vec<f64>,
    /// `out_dim × in_dim`
    pub projection: Matrix<f64>,
    /// Ridge added to a singular within-class scatter, 0 when none was needed.
    pub ridge: f64,
}

impl LdaModel {
    pub fn out_dim(&self) -> usize {
        self.projection.rows()
    }
}

/// Rows of `x` grouped by label, in label order.
pub(crate) fn group_rows(x: &Matrix<f64>, labels: &[usize]) -> Result<BTreeMap<usize, Vec<usize>>> {
    if labels.len() != x.rows() {
        return Err(Error::Shape {
            context: "labels per row",
            expected: x.rows(),
            found: labels.len(),
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Degenerate("need at least 2 classes".into()));
    }
    if let Some((l, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Degenerate(format!("class {l} has fewer than 2 samples")));
    }
    Ok(groups)
}

/// Pooled within-class covariance and per-class means.
pub(crate) fn within_class(
    x: &Matrix<f64>,
    groups: &BTreeMap<usize, Vec<usize>>,
) -> (Matrix<f64>, Vec<(Vec<f64>, usize)>) {
    let d = x.cols();
    let mut within = Matrix::<f64>::zeros(d, d);
    let mut means = Vec::with_capacity(groups.len());
    for idx in groups.values() {
        let xs = x.select_rows(idx);
        let m = mean_rows(&xs);
        let s = scatter(&xs, &m);
        for (w, v) in within.data_mut().iter_mut().zip(s.data()) {
            *w += v;
        }
        means.push((m, idx.len()));
    }
    let dof = (x.rows() - groups.len()) as f64;
    within.data_mut().iter_mut().for_each(|v| *v /= dof);
    (symmetrize(&within), means)
}

/// Adds `ε·s/d · I` when `a` is numerically singular relative to the scale
/// `s = max(tr(a), total_trace)`; returns the ridge used.
pub(crate) fn regularize(a: &mut Matrix<f64>, total_trace: f64) -> Result<f64> {
    let d = a.rows();
    let eig = sym_eigen(a)?;
    let trace: f64 = (0..d).map(|i| a.get(i, i)).sum();
    let scale = trace.max(total_trace);
    if eig.values[d - 1] > 1e-10 * scale {
        return Ok(0.0);
    }
    let ridge = if scale > 0.0 { 1e-6 * scale / d as f64 } else { 1e-6 };
    for i in 0..d {
        a.set(i, i, a.get(i, i) + ridge);
    }
    Ok(ridge)
}

/// Sum of per-dimension variances of the rows of `x`.
pub(crate) fn total_variance(x: &Matrix<f64>, mean: &[f64]) -> f64 {
    let s = scatter(x, mean);
    (0..x.cols()).map(|i| s.get(i, i)).sum::<f64>() / x.rows() as f64
}

/// Whitens the within-class scatter, then keeps the leading principal
/// directions of the whitened between-class scatter.
pub fn lda_fit(x: &Matrix<f64>, labels: &[usize], out_dim: usize) -> Result<LdaModel> {
    let groups = group_rows(x, labels)?;
    let d = x.cols();
    let max_dim = d.min(groups.len() - 1);
    if out_dim == 0 || out_dim > max_dim {
        return Err(Error::InvalidConfig(format!(
            "LDA output dimension {out_dim} must be in 1..={max_dim}"
        )));
    }
    let mean = mean_rows(x);
    let (mut within, class_means) = within_class(x, &groups);
    let ridge = regularize(&mut within, total_variance(x, &mean))?;
    let w_eig = sym_eigen(&within)?;
    let whiten = spectral_map(&w_eig, |l| 1.0 / Float::sqrt(l));

    let mut between = Matrix::<f64>::zeros(d, d);
    let n = x.rows() as f64;
    for (m, count) in &class_means {
        let c: Vec<f64> = m.iter().zip(&mean).map(|(a, b)| a - b).collect();
        let wc = super::linalg::mat_vec(&whiten, &c);
        let weight = *count as f64 / n;
        for a in 0..d {
            for b in 0..d {
                let v = between.get(a, b) + weight * wc[a] * wc[b];
                between.set(a, b, v);
            }
        }
    }
    let b_eig = sym_eigen(&symmetrize(&between))?;
    let top = Matrix::from_fn(out_dim, d, |i, j| b_eig.vectors.get(j, i));
    let projection = top.matmul(&whiten)?;
    Ok(LdaModel {
        mean,
        projection,
        ridge,
    })
}

pub fn lda_apply(model: &LdaModel, x: &Matrix<f64>) -> Result<Matrix<f64>> {
    project(x, &model.mean, &model.projection)
}
