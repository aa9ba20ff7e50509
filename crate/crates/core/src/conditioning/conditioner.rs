use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::ops::{
    control_layer_bwd, control_layer_fwd, net_site_bwd, net_site_fwd, scaled_shift_fwd, trunk_bwd, trunk_fwd,
    variable_grad, vector_fwd, vector_grad, NetHeadGrads, NetSiteOut,
};
use super::spec::{ConditioningSpec, Mechanism, Transform};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::glorot;
use crate::nn::{Activation, Gradients, ParamGroup, ParamId, ParamStore};
use crate::real::Real;

/// Scale-head bias magnitude; `sigmoid(±4)` sits at 0.982 / 0.018.
const SCALE_HEAD_BIAS: f64 = 4.0;
/// Initial control-vector weight, giving `sigmoid(-4) ≈ 0.018`.
const VECTOR_INIT: f64 = -4.0;
const CONTROL_LAYER_INIT_RANGE: f64 = 1e-3;

type Affine = (ParamId, ParamId);

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SiteParams {
    Network {
        scale: Option<Affine>,
        shift: Option<Affine>,
    },
    Layer {
        w: ParamId,
        b: ParamId,
        activation: Activation,
        transform: Transform,
    },
    Vector {
        w: ParamId,
    },
    Variable {
        w: ParamId,
    },
    Constant {
        c: f64,
    },
    Concat,
}

/// A conditioning mechanism registered into a model's parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    spec: ConditioningSpec,
    embed_dim: usize,
    sites: Vec<usize>,
    trunk: Option<[Affine; 2]>,
    slots: Vec<SiteParams>,
}

#[derive(Debug, Clone)]
pub(crate) enum SiteCache<T> {
    Network(NetSiteOut<T>),
    Layer(Matrix<T>),
    Plain,
}

#[derive(Debug, Clone)]
pub(crate) struct CondCache<T> {
    pub e: Matrix<T>,
    trunk: Option<(Matrix<T>, Matrix<T>)>,
    sites: Vec<Option<SiteCache<T>>>,
}

/// Bias that puts `act` at (or near) the neutral element of `transform`.
fn neutral_bias(act: Activation, transform: Transform) -> f64 {
    match (transform, act) {
        (Transform::Scale, Activation::Sigmoid) => SCALE_HEAD_BIAS,
        (Transform::Scale, Activation::Tanh) => 3.0,
        (Transform::Scale, _) => 1.0,
        (_, Activation::Sigmoid) => -SCALE_HEAD_BIAS,
        _ => 0.0,
    }
}

impl Conditioner {
    /// Appends the on/off state of every ReLU unit evaluated in `cache`.
    pub(crate) fn relu_pattern<T: Real>(&self, cache: &CondCache<T>, out: &mut Vec<bool>) {
        if let Some((z1, z2)) = &cache.trunk {
            out.extend(z1.data().iter().chain(z2.data()).map(|&v| v > T::zero()));
        }
        for (slot, c) in self.slots.iter().zip(&cache.sites) {
            if let (
                SiteParams::Layer {
                    activation: Activation::Relu,
                    ..
                },
                Some(SiteCache::Layer(a)),
            ) = (slot, c)
            {
                out.extend(a.data().iter().map(|&v| v > T::zero()));
            }
        }
    }

    /// Validates `spec` and registers its parameters, initialized so that the
    /// conditioned network starts close to the unconditioned one.
    pub fn register<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        spec: &ConditioningSpec,
        embed_dim: usize,
        site_dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let sites = spec.validate(embed_dim, site_dims)?;
        let g = ParamGroup::Conditioning;
        let mut trunk = None;
        if let Mechanism::ControlNetwork { shared_units, .. } = spec.mechanism {
            let u = shared_units;
            let w1 = store.add("cond.shared0.weight", glorot(rng, embed_dim, u), g);
            let b1 = store.add("cond.shared0.bias", Matrix::zeros(1, u), g);
            let w2 = store.add("cond.shared1.weight", glorot(rng, u, u), g);
            let b2 = store.add("cond.shared1.bias", Matrix::zeros(1, u), g);
            trunk = Some([(w1, b1), (w2, b2)]);
        }
        let mut slots = Vec::with_capacity(sites.len());
        for &s in &sites {
            let d = site_dims[s];
            let slot = match &spec.mechanism {
                Mechanism::ControlNetwork {
                    shared_units,
                    use_skip,
                    transform,
                } => {
                    let u = *shared_units;
                    let scale = (*transform != Transform::Shift).then(|| {
                        let bias = if *use_skip { -SCALE_HEAD_BIAS } else { SCALE_HEAD_BIAS };
                        (
                            store.add(format!("cond.site{s}.scale.weight"), Matrix::zeros(u, d), g),
                            store.add(format!("cond.site{s}.scale.bias"), Matrix::filled(1, d, T::of(bias)), g),
                        )
                    });
                    let shift = (*transform != Transform::Scale).then(|| {
                        (
                            store.add(format!("cond.site{s}.shift.weight"), Matrix::zeros(u, d), g),
                            store.add(format!("cond.site{s}.shift.bias"), Matrix::zeros(1, d), g),
                        )
                    });
                    SiteParams::Network { scale, shift }
                }
                Mechanism::ControlLayer { activation, transform } => {
                    let r = CONTROL_LAYER_INIT_RANGE;
                    let w = Matrix::from_fn(embed_dim, d, |_, _| T::of(rng.random_range(-r..r)));
                    let b = Matrix::filled(1, d, T::of(neutral_bias(*activation, *transform)));
                    SiteParams::Layer {
                        w: store.add(format!("cond.site{s}.layer.weight"), w, g),
                        b: store.add(format!("cond.site{s}.layer.bias"), b, g),
                        activation: *activation,
                        transform: *transform,
                    }
                }
                Mechanism::ControlVector => SiteParams::Vector {
                    w: store.add(
                        format!("cond.site{s}.vector"),
                        Matrix::filled(1, d, T::of(VECTOR_INIT)),
                        g,
                    ),
                },
                Mechanism::ControlVariable => SiteParams::Variable {
                    w: store.add(format!("cond.site{s}.variable"), Matrix::zeros(1, 1), g),
                },
                Mechanism::ConstantScale { c } => SiteParams::Constant { c: *c },
                Mechanism::Concatenate => SiteParams::Concat,
            };
            slots.push(slot);
        }
        Ok(Conditioner {
            spec: spec.clone(),
            embed_dim,
            sites,
            trunk,
            slots,
        })
    }

    pub fn spec(&self) -> &ConditioningSpec {
        &self.spec
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Resolved, sorted site indices.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub(crate) fn slot_of(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }

    fn use_skip(&self) -> bool {
        matches!(self.spec.mechanism, Mechanism::ControlNetwork { use_skip: true, .. })
    }

    pub(crate) fn begin<T: Real>(&self, store: &ParamStore<T>, e: Matrix<T>) -> CondCache<T> {
        let trunk = self.trunk.map(|[(w1, b1), (w2, b2)]| {
            trunk_fwd(
                &e,
                (store.get(w1), store.get(b1).data()),
                (store.get(w2), store.get(b2).data()),
            )
        });
        CondCache {
            e,
            trunk,
            sites: (0..self.sites.len()).map(|_| None).collect(),
        }
    }

    pub(crate) fn apply<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &mut CondCache<T>,
        slot: usize,
        h: &Matrix<T>,
    ) -> Result<Matrix<T>> {
        let e = &cache.e;
        let (out, site_cache) = match &self.slots[slot] {
            SiteParams::Network { scale, shift } => {
                let (_, z2) = cache.trunk.as_ref().expect("control network trunk");
                let r = net_site_fwd(
                    h,
                    z2,
                    scale.map(|(w, b)| (store.get(w), store.get(b).data())),
                    shift.map(|(w, b)| (store.get(w), store.get(b).data())),
                    self.use_skip(),
                );
                (r.out.clone(), SiteCache::Network(r))
            }
            SiteParams::Layer {
                w,
                b,
                activation,
                transform,
            } => {
                let (out, a) = control_layer_fwd(h, e, store.get(*w), store.get(*b).data(), *activation, *transform);
                (out, SiteCache::Layer(a))
            }
            SiteParams::Vector { w } => (vector_fwd(h, e, store.get(*w).data()), SiteCache::Plain),
            SiteParams::Variable { w } => (scaled_shift_fwd(h, e, store.get(*w).data()[0]), SiteCache::Plain),
            SiteParams::Constant { c } => (scaled_shift_fwd(h, e, T::of(*c)), SiteCache::Plain),
            SiteParams::Concat => (h.hconcat(e)?, SiteCache::Plain),
        };
        cache.sites[slot] = Some(site_cache);
        Ok(out)
    }

    /// Gradient with respect to the site input `h`; parameter gradients are
    /// accumulated into `grads` when `write` is set. Control-network heads
    /// add their trunk contribution to `dz2`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &CondCache<T>,
        slot: usize,
        h: &Matrix<T>,
        dout: &Matrix<T>,
        grads: &mut Gradients<T>,
        write: bool,
        dz2: &mut Option<Matrix<T>>,
    ) -> Matrix<T> {
        let e = &cache.e;
        let site_cache = cache.sites[slot].as_ref().expect("site evaluated in forward");
        match (&self.slots[slot], site_cache) {
            (SiteParams::Network { scale, shift }, SiteCache::Network(r)) => {
                let (_, z2) = cache.trunk.as_ref().expect("control network trunk");
                let acc = dz2.get_or_insert_with(|| Matrix::zeros(z2.rows(), z2.cols()));
                let head_grads = if write {
                    match (*scale, *shift) {
                        (Some((sw, sb)), Some((hw, hb))) => {
                            grads.disjoint_mut([sw, sb, hw, hb]).map(|[a, b, c, d]| NetHeadGrads {
                                scale: Some((a, b)),
                                shift: Some((c, d)),
                            })
                        }
                        (Some((w, b)), None) => grads.pair_mut(w, b).map(|g| NetHeadGrads {
                            scale: Some(g),
                            shift: None,
                        }),
                        (None, Some((w, b))) => grads.pair_mut(w, b).map(|g| NetHeadGrads {
                            scale: None,
                            shift: Some(g),
                        }),
                        (None, None) => None,
                    }
                } else {
                    None
                };
                net_site_bwd(
                    h,
                    z2,
                    r,
                    scale.map(|(w, _)| store.get(w)),
                    shift.map(|(w, _)| store.get(w)),
                    self.use_skip(),
                    dout,
                    head_grads,
                    acc,
                )
            }
            (
                SiteParams::Layer {
                    w,
                    b,
                    activation,
                    transform,
                },
                SiteCache::Layer(a),
            ) => {
                let g = if write { grads.pair_mut(*w, *b) } else { None };
                control_layer_bwd(h, e, a, *activation, *transform, dout, g)
            }
            (SiteParams::Vector { w }, _) => {
                if write {
                    if let Some(dw) = grads.get_mut(*w) {
                        vector_grad(e, store.get(*w).data(), dout, dw);
                    }
                }
                dout.clone()
            }
            (SiteParams::Variable { w }, _) => {
                if write {
                    if let Some(dw) = grads.get_mut(*w) {
                        dw.data_mut()[0] += variable_grad(e, dout);
                    }
                }
                dout.clone()
            }
            (SiteParams::Concat, _) => {
                let cols = h.cols();
                Matrix::from_fn(dout.rows(), cols, |i, j| dout.get(i, j))
            }
            _ => dout.clone(),
        }
    }

    pub(crate) fn finish_backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        cache: &CondCache<T>,
        dz2: Option<Matrix<T>>,
        grads: &mut Gradients<T>,
    ) {
        let (Some([(w1, b1), (w2, b2)]), Some((z1, z2)), Some(dz2)) = (self.trunk, cache.trunk.as_ref(), dz2) else {
            return;
        };
        let Some([gw1, gb1, gw2, gb2]) = grads.disjoint_mut([w1, b1, w2, b2]) else {
            return;
        };
        trunk_bwd(&cache.e, z1, z2, store.get(w2), &dz2, (gw1, gb1), (gw2, gb2));
    }
}
