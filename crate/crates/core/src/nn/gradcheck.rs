use alloc::vec::Vec;

use super::loss::cross_entropy_loss;
use super::mlp::{Mlp, Mode};
use super::params::ParamId;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::real::Real;

/// A labelled mini-batch, with embeddings when the model is conditioned.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T = f32> {
    pub x: &'a Matrix<T>,
    pub emb: Option<&'a Matrix<T>>,
    pub labels: &'a [usize],
}

/// Loss at the current parameters, with the ReLU on/off pattern it ran under.
fn probe(
    model: &Mlp<f64>,
    x: &Matrix<f64>,
    emb: Option<&Matrix<f64>>,
    labels: &[usize],
    mode: Mode,
) -> Result<(f64, Vec<bool>)> {
    let cache = model.forward(x, emb, mode)?;
    let loss = cross_entropy_loss(cache.logits(), labels)?.0;
    Ok((loss, model.relu_pattern(&cache)))
}

/// Step is divided by ten when a probe crosses a ReLU kink, at most this often.
const MAX_STEP_SHRINKS: usize = 3;

/// Rounding error of the fourth-order quotient is a few `ε·|loss|/h`; a
/// hundred-thousandfold margin keeps it below a 1e-4 relative tolerance.
const QUOTIENT_RESOLUTION: f64 = 1e5;

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences, over every trainable scalar of `model`:
/// `|a − n| / max(|a|, |n|, floor)`, where `floor` is the larger of `1e-8`
/// and the rounding resolution of the difference quotient scaled up by the
/// inverse tolerance, `1e5 · ε_f64 · max(|loss|, 1) / h`. Below that floor a
/// gradient cannot be told apart from zero.
///
/// Both sides run on a 64-bit copy of the model. The numeric side uses the
/// fourth-order central stencil at `±epsilon, ±2·epsilon`; a coordinate whose
/// probes change the on/off state of any ReLU unit is re-probed with a smaller
/// step, since the difference quotient is meaningless across a kink.
pub fn grad_check<T: Real>(model: &Mlp<T>, batch: Batch<'_, T>, epsilon: f64, mode: Mode) -> Result<f64> {
    let mut m = model.cast::<f64>();
    let x = batch.x.cast::<f64>();
    let emb = batch.emb.map(|e| e.cast::<f64>());
    let cache = m.forward(&x, emb.as_ref(), mode)?;
    let base_pattern = m.relu_pattern(&cache);
    let (loss, dlogits) = cross_entropy_loss(cache.logits(), batch.labels)?;
    let loss_scale = loss.abs().max(1.0);
    let grads = m.backward(&cache, &dlogits)?;

    let trainable: Vec<usize> = m
        .store()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_trainable())
        .map(|(i, _)| i)
        .collect();
    let mut worst: f64 = 0.0;
    for pi in trainable {
        let id = ParamId(pi);
        let analytic = grads.get(id).expect("trainable parameter has a gradient").clone();
        for k in 0..analytic.data().len() {
            let orig = m.store().get(id).data()[k];
            let mut h = epsilon;
            let mut numeric = 0.0;
            for attempt in 0..=MAX_STEP_SHRINKS {
                let mut f = [0.0; 4];
                let mut smooth = true;
                for (slot, off) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
                    m.store_mut().get_mut(id).data_mut()[k] = orig + off * h;
                    let (loss, pattern) = probe(&m, &x, emb.as_ref(), batch.labels, mode)?;
                    f[slot] = loss;
                    smooth &= pattern == base_pattern;
                }
                m.store_mut().get_mut(id).data_mut()[k] = orig;
                numeric = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
                if smooth || attempt == MAX_STEP_SHRINKS {
                    break;
                }
                h /= 10.0;
            }
            let a = analytic.data()[k];
            let floor = (QUOTIENT_RESOLUTION * f64::EPSILON * loss_scale / h).max(1e-8);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
