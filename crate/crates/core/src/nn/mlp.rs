use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::batchnorm::{BatchNorm, BnCache};
use super::glorot;
use super::params::{Gradients, ParamGroup, ParamId, ParamStore};
use crate::conditioning::{
    affine, affine_input_grad, affine_param_grads, CondCache, Conditioner, ConditioningSpec, Mechanism,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl MlpConfig {
    /// Four 64-unit ReLU layers with batch normalization.
    pub fn desk(input_dim: usize, num_classes: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden: alloc::vec![64; 4],
            num_classes,
            activation: Activation::Relu,
            batch_norm: true,
        }
    }

    /// Six 2048-unit layers over 40-dim features with ±5 frames of context,
    /// classifying 3984 tied states.
    pub fn reference() -> Self {
        MlpConfig {
            input_dim: 440,
            hidden: alloc::vec![2048; 6],
            num_classes: 3984,
            activation: Activation::Relu,
            batch_norm: true,
        }
    }
}

/// Affine map (`weight: in × out`, `bias: 1 × out`) followed by an activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

/// A dense layer with optional batch normalization between the affine
/// transform and the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization.
    Train,
    /// Running statistics; a pure function of inputs and parameters.
    Eval,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub mode: Mode,
    version: u64,
    x: Matrix<T>,
    /// Layer inputs that differ from the previous layer's output because a
    /// conditioning site sits in between.
    conditioned: Vec<Option<Matrix<T>>>,
    pub bn: Vec<Option<BnCache<T>>>,
    /// Post-activation output of every layer; the last one holds the logits.
    pub outputs: Vec<Matrix<T>>,
    cond: Option<CondCache<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn logits(&self) -> &Matrix<T> {
        self.outputs.last().expect("at least one layer")
    }

    /// Hidden activations `h_1 … h_{L-1}`.
    pub fn hidden(&self) -> &[Matrix<T>] {
        &self.outputs[..self.outputs.len() - 1]
    }

    /// Value entering site `l` before conditioning.
    fn site_value(&self, l: usize) -> &Matrix<T> {
        if l == 0 {
            &self.x
        } else {
            &self.outputs[l - 1]
        }
    }

    /// Value entering layer `l` after conditioning.
    pub fn layer_input(&self, l: usize) -> &Matrix<T> {
        self.conditioned[l].as_ref().unwrap_or_else(|| self.site_value(l))
    }
}

/// Feed-forward frame classifier with optional embedding conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = f32> {
    store: ParamStore<T>,
    config: MlpConfig,
    layers: Vec<Layer>,
    conditioner: Option<Conditioner>,
    /// First-layer weights acting on concatenated embeddings (`embed_dim × units`).
    concat: Option<ParamId>,
    version: u64,
}

impl<T: Real> Mlp<T> {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.num_classes == 0 || config.hidden.contains(&0) {
            return Err(Error::InvalidConfig("zero-width layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut dims = alloc::vec![config.input_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(config.num_classes);
        let last = dims.len() - 2;
        for l in 0..=last {
            let (i, o) = (dims[l], dims[l + 1]);
            let weight = store.add(format!("layer{l}.weight"), glorot(&mut rng, i, o), ParamGroup::Main);
            let bias = store.add(format!("layer{l}.bias"), Matrix::zeros(1, o), ParamGroup::Main);
            let hidden = l < last;
            let bn = (hidden && config.batch_norm).then(|| BatchNorm::register(&mut store, &format!("layer{l}"), o));
            layers.push(Layer {
                dense: Dense {
                    weight,
                    bias,
                    activation: if hidden { config.activation } else { Activation::Linear },
                },
                bn,
            });
        }
        Ok(Mlp {
            store,
            config,
            layers,
            conditioner: None,
            concat: None,
            version: 0,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn conditioner(&self) -> Option<&Conditioner> {
        self.conditioner.as_ref()
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    /// Mutable access to the parameters; invalidates outstanding forward caches.
    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        self.version += 1;
        &mut self.store
    }

    /// Width of every conditioning site: input features, then each hidden layer.
    pub fn site_dims(&self) -> Vec<usize> {
        let mut v = alloc::vec![self.config.input_dim];
        v.extend_from_slice(&self.config.hidden);
        v
    }

    pub fn num_params(&self, group: ParamGroup) -> usize {
        self.store.count(group)
    }

    /// Copy of this model with a conditioning mechanism attached.
    ///
    /// Every existing parameter is copied unchanged. For concatenation the
    /// first layer gains `embed_dim` zero-initialized input rows, held as a
    /// separate conditioning tensor, so the new model computes exactly what
    /// this one does.
    pub fn with_conditioning(&self, spec: &ConditioningSpec, embed_dim: usize, seed: u64) -> Result<Self> {
        if self.conditioner.is_some() {
            return Err(Error::InvalidConfig("model is already conditioned".into()));
        }
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a7f_0c0d);
        let cond = Conditioner::register(&mut out.store, spec, embed_dim, &self.site_dims(), &mut rng)?;
        if spec.mechanism == Mechanism::Concatenate {
            let units = out.store.get(out.layers[0].dense.weight).cols();
            out.concat = Some(out.store.add(
                "cond.site0.concat.weight",
                Matrix::zeros(embed_dim, units),
                ParamGroup::Conditioning,
            ));
        }
        out.conditioner = Some(cond);
        out.version += 1;
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            store: self.store.cast(),
            config: self.config.clone(),
            layers: self.layers.clone(),
            conditioner: self.conditioner.clone(),
            concat: self.concat,
            version: 0,
        }
    }

    fn check_embedding<'a>(&self, rows: usize, emb: Option<&'a Matrix<T>>) -> Result<Option<&'a Matrix<T>>> {
        match (&self.conditioner, emb) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::MissingEmbedding("conditioned model".into())),
            (Some(c), Some(e)) => {
                if e.cols() != c.embed_dim() {
                    return Err(Error::Shape {
                        context: "embedding width",
                        expected: c.embed_dim(),
                        found: e.cols(),
                    });
                }
                if e.rows() != rows && e.rows() != 1 {
                    return Err(Error::Shape {
                        context: "embedding rows",
                        expected: rows,
                        found: e.rows(),
                    });
                }
                Ok(Some(e))
            }
        }
    }

    /// Runs the network on `x` (`batch × input_dim`). `emb` supplies one
    /// embedding row per frame, or a single row broadcast to all frames.
    pub fn forward(&self, x: &Matrix<T>, emb: Option<&Matrix<T>>, mode: Mode) -> Result<ForwardCache<T>> {
        if x.cols() != self.config.input_dim {
            return Err(Error::LayerInput {
                layer: 0,
                expected: self.config.input_dim,
                found: x.cols(),
            });
        }
        let emb = self.check_embedding(x.rows(), emb)?;
        let mut cond_cache = match (&self.conditioner, emb) {
            (Some(c), Some(e)) => Some(c.begin(&self.store, e.broadcast_rows(x.rows()))),
            _ => None,
        };
        let n = self.layers.len();
        let mut conditioned = Vec::with_capacity(n);
        let mut bn_caches = Vec::with_capacity(n);
        let mut outputs: Vec<Matrix<T>> = Vec::with_capacity(n);
        for (l, layer) in self.layers.iter().enumerate() {
            let site_in = if l == 0 { x } else { &outputs[l - 1] };
            let slot = self
                .conditioner
                .as_ref()
                .and_then(|c| c.slot_of(l))
                .filter(|_| self.concat.is_none());
            let cond_in = match (slot, self.conditioner.as_ref(), cond_cache.as_mut()) {
                (Some(s), Some(c), Some(cache)) => Some(c.apply(&self.store, cache, s, site_in)?),
                _ => None,
            };
            let input = cond_in.as_ref().unwrap_or(site_in);
            let w = self.store.get(layer.dense.weight);
            if input.cols() != w.rows() {
                return Err(Error::LayerInput {
                    layer: l,
                    expected: w.rows(),
                    found: input.cols(),
                });
            }
            let mut z = affine(input, w, self.store.get(layer.dense.bias).data());
            if let (0, Some(wc), Some(cc)) = (l, self.concat, cond_cache.as_ref()) {
                let ez = cc.e.matmul(self.store.get(wc))?;
                z.data_mut().iter_mut().zip(ez.data()).for_each(|(a, b)| *a += *b);
            }
            let (pre, bn_cache) = match &layer.bn {
                Some(bn) => {
                    let (y, c) = bn.forward(&self.store, &z, mode == Mode::Train);
                    (y, Some(c))
                }
                None => (z, None),
            };
            let act = layer.dense.activation;
            let out = if act == Activation::Linear {
                pre
            } else {
                pre.map(|v| act.apply(v))
            };
            conditioned.push(cond_in);
            bn_caches.push(bn_cache);
            outputs.push(out);
        }
        let cache = ForwardCache {
            mode,
            version: self.version,
            x: x.clone(),
            conditioned,
            bn: bn_caches,
            outputs,
            cond: cond_cache,
        };
        if !cache.logits().is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok(cache)
    }

    /// Logits in eval mode.
    pub fn logits(&self, x: &Matrix<T>, emb: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        let mut cache = self.forward(x, emb, Mode::Eval)?;
        Ok(cache.outputs.pop().expect("at least one layer"))
    }

    /// Arg-max class per row in eval mode.
    pub fn predict(&self, x: &Matrix<T>, emb: Option<&Matrix<T>>) -> Result<Vec<usize>> {
        let logits = self.logits(x, emb)?;
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Folds batch statistics from a training-mode forward into the
    /// batch-norm running estimates.
    /// On/off state of every ReLU unit evaluated by `cache`, main network and
    /// conditioning alike.
    pub(crate) fn relu_pattern(&self, cache: &ForwardCache<T>) -> Vec<bool> {
        let mut out = Vec::new();
        for (layer, h) in self.layers.iter().zip(&cache.outputs) {
            if layer.dense.activation == Activation::Relu {
                out.extend(h.data().iter().map(|&v| v > T::zero()));
            }
        }
        if let (Some(c), Some(cc)) = (&self.conditioner, &cache.cond) {
            c.relu_pattern(cc, &mut out);
        }
        out
    }

    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let rows = cache.x.rows();
        for (layer, bn_cache) in self.layers.iter().zip(&cache.bn) {
            if let (Some(bn), Some(c)) = (&layer.bn, bn_cache) {
                bn.update_running(&mut self.store, c, rows);
            }
        }
        self.version += 1;
    }

    /// Fresh gradient buffers for this model.
    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients::zeros_like(&self.store)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &Matrix<T>) -> Result<Gradients<T>> {
        let mut grads = self.zero_grads();
        self.backward_into(cache, dlogits, &mut grads, false)?;
        Ok(grads)
    }

    /// Writes parameter gradients into `grads`. With `freeze_main` the main
    /// network's gradient buffers are left untouched and only conditioning
    /// parameters receive gradients.
    pub fn backward_into(
        &self,
        cache: &ForwardCache<T>,
        dlogits: &Matrix<T>,
        grads: &mut Gradients<T>,
        freeze_main: bool,
    ) -> Result<()> {
        if cache.version != self.version || cache.outputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        if grads.len() != self.store.len() {
            return Err(Error::Shape {
                context: "gradient buffers",
                expected: self.store.len(),
                found: grads.len(),
            });
        }
        let logits = cache.logits();
        if dlogits.rows() != logits.rows() || dlogits.cols() != logits.cols() {
            return Err(Error::Shape {
                context: "logit gradient",
                expected: logits.rows() * logits.cols(),
                found: dlogits.rows() * dlogits.cols(),
            });
        }
        grads.zero_where(&self.store, |g| {
            g == ParamGroup::Conditioning || (g == ParamGroup::Main && !freeze_main)
        });
        let write_main = !freeze_main;
        let first_site = self.conditioner.as_ref().map_or(usize::MAX, |c| c.sites()[0]);
        let mut dz2 = None;
        let mut dout = dlogits.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let act = layer.dense.activation;
            let mut dpre = dout;
            if act != Activation::Linear {
                for (d, &y) in dpre.data_mut().iter_mut().zip(cache.outputs[l].data()) {
                    *d *= act.grad_from_output(y);
                }
            }
            let dz = match (&layer.bn, &cache.bn[l]) {
                (Some(bn), Some(bc)) => {
                    let g = if write_main {
                        grads.pair_mut(bn.gamma, bn.beta)
                    } else {
                        None
                    };
                    bn.backward(&self.store, bc, &dpre, g)
                }
                _ => dpre,
            };
            let input = cache.layer_input(l);
            if write_main {
                if let Some((dw, db)) = grads.pair_mut(layer.dense.weight, layer.dense.bias) {
                    affine_param_grads(input, &dz, dw, db);
                }
            }
            if let (0, Some(wc), Some(cc)) = (l, self.concat, cache.cond.as_ref()) {
                if let Some(dwc) = grads.get_mut(wc) {
                    let g = cc.e.t_matmul(&dz)?;
                    dwc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += *b);
                }
            }
            let need_dx = if l == 0 {
                first_site == 0 && self.concat.is_none()
            } else {
                !freeze_main || l >= first_site
            };
            if !need_dx {
                break;
            }
            let mut dx = affine_input_grad(&dz, self.store.get(layer.dense.weight));
            if let (Some(c), Some(cc)) = (&self.conditioner, &cache.cond) {
                if let Some(slot) = c.slot_of(l) {
                    dx = c.backward(&self.store, cc, slot, cache.site_value(l), &dx, grads, true, &mut dz2);
                }
            }
            if l == 0 {
                break;
            }
            dout = dx;
        }
        if let (Some(c), Some(cc)) = (&self.conditioner, &cache.cond) {
            c.finish_backward(&self.store, cc, dz2, grads);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy_loss, grad_check, Batch};

    fn identity_linear(dim: usize) -> Mlp<f32> {
        let cfg = MlpConfig {
            input_dim: dim,
            hidden: alloc::vec![],
            num_classes: dim,
            activation: Activation::Linear,
            batch_norm: false,
        };
        let mut m = Mlp::new(cfg, 0).unwrap();
        let w = m.layers[0].dense.weight;
        *m.store_mut().get_mut(w) = Matrix::identity(dim);
        m
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let m = identity_linear(2);
        let x = Matrix::from_rows(&[[1.0f32, 2.0]]).unwrap();
        assert_eq!(m.logits(&x, None).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_identity_layer() {
        let cfg = MlpConfig {
            input_dim: 2,
            hidden: alloc::vec![2],
            num_classes: 2,
            activation: Activation::Relu,
            batch_norm: false,
        };
        let mut m = Mlp::<f32>::new(cfg, 0).unwrap();
        for l in 0..2 {
            let w = m.layers[l].dense.weight;
            *m.store_mut().get_mut(w) = Matrix::identity(2);
        }
        let x = Matrix::from_rows(&[[-1.0f32, 3.0]]).unwrap();
        let cache = m.forward(&x, None, Mode::Eval).unwrap();
        assert_eq!(cache.hidden()[0].data(), &[0.0, 3.0]);
    }

    #[test]
    fn random_net_shapes() {
        let cfg = MlpConfig {
            input_dim: 5,
            hidden: alloc::vec![7],
            num_classes: 3,
            activation: Activation::Relu,
            batch_norm: true,
        };
        let m = Mlp::<f32>::new(cfg, 11).unwrap();
        let x = Matrix::from_fn(4, 5, |i, j| (i as f32 - j as f32) * 0.3);
        let cache = m.forward(&x, None, Mode::Train).unwrap();
        assert_eq!((cache.logits().rows(), cache.logits().cols()), (4, 3));
        assert!(cache.logits().is_finite());
        assert_eq!(cache.hidden().len(), 1);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let m = identity_linear(2);
        let x = Matrix::<f32>::zeros(1, 3);
        assert_eq!(
            m.forward(&x, None, Mode::Eval).unwrap_err(),
            Error::LayerInput {
                layer: 0,
                expected: 2,
                found: 3
            }
        );
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let m = Mlp::<f32>::new(MlpConfig::desk(6, 4), 3).unwrap();
        let x = Matrix::from_fn(9, 6, |i, j| ((i * 31 + j * 7) % 11) as f32 * 0.1);
        assert_eq!(m.logits(&x, None).unwrap(), m.logits(&x, None).unwrap());
    }

    #[test]
    fn zero_logit_gradient_gives_zero_parameter_gradients() {
        let m = Mlp::<f32>::new(MlpConfig::desk(4, 3), 5).unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| (i + j) as f32 * 0.2 - 0.5);
        let cache = m.forward(&x, None, Mode::Train).unwrap();
        let g = m.backward(&cache, &Matrix::zeros(6, 3)).unwrap();
        for gm in g.iter().flatten() {
            assert!(gm.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Mlp::<f32>::new(MlpConfig::desk(4, 3), 5).unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| (i + j) as f32 * 0.2);
        let cache = m.forward(&x, None, Mode::Train).unwrap();
        m.store_mut();
        assert_eq!(m.backward(&cache, &Matrix::zeros(6, 3)).unwrap_err(), Error::StaleCache);
    }

    #[test]
    fn frozen_main_leaves_gradient_buffers_untouched() {
        let spec = ConditioningSpec::new(
            Mechanism::ControlVariable,
            crate::conditioning::SiteSelection::InputOnly,
        );
        let m = Mlp::<f32>::new(MlpConfig::desk(4, 3), 5)
            .unwrap()
            .with_conditioning(&spec, 4, 1)
            .unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| (i * j) as f32 * 0.1);
        let e = Matrix::from_fn(1, 4, |_, j| j as f32);
        let cache = m.forward(&x, Some(&e), Mode::Train).unwrap();
        let (_, d) = cross_entropy_loss(cache.logits(), &[0, 1, 2, 0, 1, 2]).unwrap();
        let mut g = m.zero_grads();
        for (i, p) in m.store().iter().enumerate() {
            if let Some(buf) = g.get_mut(ParamId(i)) {
                if p.group == ParamGroup::Main {
                    buf.data_mut().fill(42.0);
                }
            }
        }
        m.backward_into(&cache, &d, &mut g, true).unwrap();
        for (i, p) in m.store().iter().enumerate() {
            let buf = g.get(ParamId(i));
            match p.group {
                ParamGroup::Main => assert!(buf.unwrap().data().iter().all(|&v| v == 42.0)),
                ParamGroup::Conditioning => assert!(buf.unwrap().data()[0] != 0.0),
                ParamGroup::Buffer => assert!(buf.is_none()),
            }
        }
    }

    #[test]
    fn grad_check_linear_model() {
        let cfg = MlpConfig {
            input_dim: 4,
            hidden: alloc::vec![],
            num_classes: 3,
            activation: Activation::Linear,
            batch_norm: false,
        };
        let m = Mlp::<f32>::new(cfg, 2).unwrap();
        let x = Matrix::from_fn(5, 4, |i, j| ((i * 3 + j * 5) % 7) as f32 * 0.3 - 1.0);
        let labels = [0, 1, 2, 1, 0];
        let err = grad_check(
            &m,
            Batch {
                x: &x,
                emb: None,
                labels: &labels,
            },
            1e-3,
            Mode::Eval,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_batch_norm_train_mode() {
        let cfg = MlpConfig {
            input_dim: 8,
            hidden: alloc::vec![8, 8],
            num_classes: 8,
            activation: Activation::Relu,
            batch_norm: true,
        };
        let m = Mlp::<f32>::new(cfg, 7).unwrap();
        let x = Matrix::from_fn(8, 8, |i, j| libm_sin((i * 8 + j) as f64) as f32);
        let labels = [0, 1, 2, 3, 4, 5, 6, 7];
        let err = grad_check(
            &m,
            Batch {
                x: &x,
                emb: None,
                labels: &labels,
            },
            1e-3,
            Mode::Train,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn libm_sin(v: f64) -> f64 {
        num_traits::Float::sin(v * 1.7 + 0.3)
    }

    #[test]
    fn concatenation_surgery_preserves_outputs() {
        let base = Mlp::<f32>::new(MlpConfig::desk(3, 4), 9).unwrap();
        let spec = ConditioningSpec::new(Mechanism::Concatenate, crate::conditioning::SiteSelection::InputOnly);
        let cat = base.with_conditioning(&spec, 2, 0).unwrap();
        let x = Matrix::from_fn(5, 3, |i, j| (i as f32 - j as f32) * 0.4);
        let e = Matrix::from_fn(5, 2, |i, j| (i * j) as f32 + 1.0);
        assert_eq!(base.logits(&x, None).unwrap(), cat.logits(&x, Some(&e)).unwrap());
    }

    #[test]
    fn frozen_concatenation_still_trains_embedding_rows() {
        let base = Mlp::<f32>::new(MlpConfig::desk(3, 4), 9).unwrap();
        let spec = ConditioningSpec::new(Mechanism::Concatenate, crate::conditioning::SiteSelection::InputOnly);
        let cat = base.with_conditioning(&spec, 2, 0).unwrap();
        assert_eq!(cat.num_params(ParamGroup::Main), base.num_params(ParamGroup::Main));
        assert_eq!(cat.num_params(ParamGroup::Conditioning), 2 * 64);
        let x = Matrix::from_fn(6, 3, |i, j| (i as f32 - j as f32) * 0.4);
        let e = Matrix::from_fn(6, 2, |i, j| (i * j) as f32 * 0.3 - 0.5);
        let cache = cat.forward(&x, Some(&e), Mode::Eval).unwrap();
        let dlogits = Matrix::from_fn(6, 4, |i, j| if i % 4 == j { -1.0 } else { 0.25 });
        let mut grads = cat.zero_grads();
        cat.backward_into(&cache, &dlogits, &mut grads, true).unwrap();
        let wc = cat.store().find("cond.site0.concat.weight").unwrap();
        assert!(grads.get(wc).unwrap().data().iter().any(|&v| v != 0.0));
        let w0 = cat.layers()[0].dense.weight;
        assert!(grads.get(w0).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
