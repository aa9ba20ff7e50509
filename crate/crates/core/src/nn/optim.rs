use alloc::vec::Vec;

use super::params::{Gradients, ParamGroup, ParamStore};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Updates every parameter whose group satisfies `trainable`.
    ///
    /// The step is all-or-nothing: a non-finite gradient aborts it before any
    /// parameter changes and names the offending tensor.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &Gradients<T>,
        trainable: impl Fn(ParamGroup) -> bool,
    ) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Shape {
                context: "gradient buffers",
                expected: store.len(),
                found: grads.len(),
            });
        }
        for (p, g) in store.iter().zip(grads.iter()) {
            if let Some(g) = g {
                if trainable(p.group) && !g.is_finite() {
                    return Err(Error::NonFinite(alloc::format!("gradient of {}", p.name)));
                }
            }
        }
        if self.velocity.len() != store.len() {
            self.velocity = (0..store.len()).map(|_| None).collect();
        }
        let lr = T::of(self.lr);
        let mu = T::of(self.momentum);
        for ((p, g), v) in store.iter_mut().zip(grads.iter()).zip(self.velocity.iter_mut()) {
            let Some(g) = g else { continue };
            if !trainable(p.group) {
                continue;
            }
            let v = v.get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for ((pv, vv), &gv) in p.value.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(v: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("w", Matrix::filled(1, 3, v), ParamGroup::Main);
        s.add("c", Matrix::filled(1, 1, v), ParamGroup::Conditioning);
        s
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut s = store_with(1.5);
        let before = s.clone();
        let mut g = Gradients::zeros_like(&s);
        g.iter().count();
        for id in 0..2 {
            g.get_mut(crate::nn::ParamId(id)).unwrap().data_mut().fill(0.7);
        }
        Sgd::new(0.0, 0.9).step(&mut s, &g, |_| true).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn plain_step_subtracts_lr_times_grad() {
        let mut s = store_with(1.0);
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(crate::nn::ParamId(0)).unwrap().data_mut().fill(0.5);
        Sgd::new(0.25, 0.0).step(&mut s, &g, |_| true).unwrap();
        assert_eq!(s.get(crate::nn::ParamId(0)).data(), &[1.0 - 0.125; 3]);
    }

    #[test]
    fn non_finite_gradient_aborts_whole_step() {
        let mut s = store_with(1.0);
        let before = s.clone();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(crate::nn::ParamId(0)).unwrap().data_mut().fill(1.0);
        g.get_mut(crate::nn::ParamId(1)).unwrap().data_mut()[0] = f32::NAN;
        let err = Sgd::new(0.1, 0.0).step(&mut s, &g, |_| true).unwrap_err();
        assert_eq!(err, Error::NonFinite("gradient of c".into()));
        assert_eq!(s, before);
    }

    #[test]
    fn frozen_group_is_not_updated() {
        let mut s = store_with(1.0);
        let mut g = Gradients::zeros_like(&s);
        for id in 0..2 {
            g.get_mut(crate::nn::ParamId(id)).unwrap().data_mut().fill(1.0);
        }
        Sgd::new(0.1, 0.0)
            .step(&mut s, &g, |grp| grp == ParamGroup::Conditioning)
            .unwrap();
        assert_eq!(s.get(crate::nn::ParamId(0)).data(), &[1.0; 3]);
        assert_eq!(s.get(crate::nn::ParamId(1)).data(), &[0.9]);
    }
}
