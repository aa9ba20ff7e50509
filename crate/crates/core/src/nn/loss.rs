use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

/// Row-wise softmax, computed with the max-subtraction trick.
pub fn softmax_rows<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over rows and its gradient with respect to the logits.
pub fn cross_entropy_loss<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape {
            context: "labels per logit row",
            expected: logits.rows(),
            found: labels.len(),
        });
    }
    let k = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: k,
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let n = T::of(logits.rows().max(1) as f64);
    let mut grad = Matrix::zeros(logits.rows(), k);
    let mut loss = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        let g = grad.row_mut(i);
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() / n;
        }
        g[label] -= T::one() / n;
    }
    Ok((loss / n, grad))
}
