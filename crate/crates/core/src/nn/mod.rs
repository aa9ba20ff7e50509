//! Minimal dense network engine: layers, batch normalization, cross-entropy
//! training and exact gradients.

mod activation;
mod batchnorm;
mod gradcheck;
mod loss;
mod mlp;
mod optim;
mod params;

pub use activation::Activation;
pub use batchnorm::{BatchNorm, BnCache};
pub use gradcheck::{grad_check, Batch};
pub use loss::{cross_entropy_loss, softmax_rows};
pub use mlp::{Dense, ForwardCache, Layer, Mlp, MlpConfig, Mode};
pub use optim::Sgd;
pub use params::{Gradients, Param, ParamGroup, ParamId, ParamStore};

use rand::Rng;

use crate::matrix::Matrix;
use crate::real::Real;

/// Uniform in `±√(6 / (fan_in + fan_out))`.
pub(crate) fn glorot<T: Real, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix<T> {
    let a = num_traits::Float::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-a..a)))
}
