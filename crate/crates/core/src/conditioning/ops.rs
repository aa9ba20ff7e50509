//! Forward and backward kernels for every conditioning mechanism.
//!
//! Embedding matrices passed to the public `apply_*` functions either have one
//! row (broadcast to every frame) or one row per frame.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::{gemm_nn, gemm_tn, Matrix};
use crate::nn::Activation;
use crate::real::{sigmoid, Real};

use super::spec::Transform;

/// Weight matrix (`in × out`) and bias of a dense map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLayerParams<T = f32> {
    /// `embed_dim × site_dim`
    pub w_e: Matrix<T>,
    pub b_e: Vec<T>,
    pub activation: Activation,
}

/// Parameters of the control network as seen from one site: the shared trunk
/// plus that site's heads. A missing head means the corresponding half of
/// the transform is not used.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlNetworkParams<T = f32> {
    pub shared: [DenseParams<T>; 2],
    pub scale_head: Option<DenseParams<T>>,
    pub shift_head: Option<DenseParams<T>>,
}

fn aligned_embedding<T: Real>(x: &Matrix<T>, e: &Matrix<T>) -> Result<Matrix<T>> {
    if e.rows() != 1 && e.rows() != x.rows() {
        return Err(Error::Shape {
            context: "embedding rows",
            expected: x.rows(),
            found: e.rows(),
        });
    }
    Ok(e.broadcast_rows(x.rows()))
}

fn check_width(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

pub(crate) fn affine<T: Real>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    gemm_nn(x.data(), w.data(), out.data_mut(), x.rows(), x.cols(), w.cols());
    out.add_row_vector(b);
    out
}

/// Accumulates `dW += xᵀ d`, `db += Σ_rows d`.
pub(crate) fn affine_param_grads<T: Real>(x: &Matrix<T>, d: &Matrix<T>, dw: &mut Matrix<T>, db: &mut Matrix<T>) {
    gemm_tn(x.data(), d.data(), dw.data_mut(), x.rows(), x.cols(), d.cols());
    for (b, s) in db.data_mut().iter_mut().zip(d.col_sums()) {
        *b += s;
    }
}

/// `d · wᵀ`
pub(crate) fn affine_input_grad<T: Real>(d: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    let wt = w.transpose();
    let mut out = Matrix::zeros(d.rows(), w.rows());
    gemm_nn(d.data(), wt.data(), out.data_mut(), d.rows(), d.cols(), w.rows());
    out
}

// ---- control layer -------------------------------------------------------

pub(crate) fn control_layer_fwd<T: Real>(
    h: &Matrix<T>,
    e: &Matrix<T>,
    w: &Matrix<T>,
    b: &[T],
    act: Activation,
    transform: Transform,
) -> (Matrix<T>, Matrix<T>) {
    let a = affine(e, w, b).map(|v| act.apply(v));
    let mut out = h.clone();
    match transform {
        Transform::Scale => out.data_mut().iter_mut().zip(a.data()).for_each(|(o, &s)| *o *= s),
        _ => out.data_mut().iter_mut().zip(a.data()).for_each(|(o, &s)| *o += s),
    }
    (out, a)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn control_layer_bwd<T: Real>(
    h: &Matrix<T>,
    e: &Matrix<T>,
    a: &Matrix<T>,
    act: Activation,
    transform: Transform,
    dout: &Matrix<T>,
    grads: Option<(&mut Matrix<T>, &mut Matrix<T>)>,
) -> Matrix<T> {
    let (dh, da) = match transform {
        Transform::Scale => {
            let mut dh = dout.clone();
            dh.data_mut().iter_mut().zip(a.data()).for_each(|(d, &s)| *d *= s);
            let mut da = dout.clone();
            da.data_mut().iter_mut().zip(h.data()).for_each(|(d, &x)| *d *= x);
            (dh, da)
        }
        _ => (dout.clone(), dout.clone()),
    };
    if let Some((dw, db)) = grads {
        let mut dpre = da;
        dpre.data_mut()
            .iter_mut()
            .zip(a.data())
            .for_each(|(d, &y)| *d *= act.grad_from_output(y));
        affine_param_grads(e, &dpre, dw, db);
    }
    dh
}

// ---- control network -----------------------------------------------------

pub(crate) fn trunk_fwd<T: Real>(
    e: &Matrix<T>,
    l1: (&Matrix<T>, &[T]),
    l2: (&Matrix<T>, &[T]),
) -> (Matrix<T>, Matrix<T>) {
    let z1 = affine(e, l1.0, l1.1).map(|v| Activation::Relu.apply(v));
    let z2 = affine(&z1, l2.0, l2.1).map(|v| Activation::Relu.apply(v));
    (z1, z2)
}

/// Backpropagates `dz2` through the trunk into its parameter gradients.
pub(crate) fn trunk_bwd<T: Real>(
    e: &Matrix<T>,
    z1: &Matrix<T>,
    z2: &Matrix<T>,
    w2: &Matrix<T>,
    dz2: &Matrix<T>,
    g1: (&mut Matrix<T>, &mut Matrix<T>),
    g2: (&mut Matrix<T>, &mut Matrix<T>),
) {
    let mut d2 = dz2.clone();
    d2.data_mut()
        .iter_mut()
        .zip(z2.data())
        .for_each(|(d, &y)| *d *= Activation::Relu.grad_from_output(y));
    affine_param_grads(z1, &d2, g2.0, g2.1);
    let mut d1 = affine_input_grad(&d2, w2);
    d1.data_mut()
        .iter_mut()
        .zip(z1.data())
        .for_each(|(d, &y)| *d *= Activation::Relu.grad_from_output(y));
    affine_param_grads(e, &d1, g1.0, g1.1);
}

#[derive(Debug, Clone)]
pub(crate) struct NetSiteOut<T> {
    pub out: Matrix<T>,
    pub scale: Option<Matrix<T>>,
    pub shift: Option<Matrix<T>>,
}

/// `h ⊙ (k + s) + b`, `k = 1` with the skip connection, otherwise `0`.
/// Without a scale head the site reduces to `h + b`.
pub(crate) fn net_site_fwd<T: Real>(
    h: &Matrix<T>,
    z2: &Matrix<T>,
    scale_head: Option<(&Matrix<T>, &[T])>,
    shift_head: Option<(&Matrix<T>, &[T])>,
    use_skip: bool,
) -> NetSiteOut<T> {
    let k = if use_skip { T::one() } else { T::zero() };
    let scale = scale_head.map(|(w, b)| affine(z2, w, b).map(sigmoid));
    let shift = shift_head.map(|(w, b)| affine(z2, w, b).map(|v| v.tanh()));
    let mut out = h.clone();
    if let Some(s) = &scale {
        out.data_mut()
            .iter_mut()
            .zip(s.data())
            .for_each(|(o, &sv)| *o *= k + sv);
    }
    if let Some(b) = &shift {
        out.data_mut().iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
    }
    NetSiteOut { out, scale, shift }
}

pub(crate) struct NetHeadGrads<'a, T> {
    pub scale: Option<(&'a mut Matrix<T>, &'a mut Matrix<T>)>,
    pub shift: Option<(&'a mut Matrix<T>, &'a mut Matrix<T>)>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn net_site_bwd<T: Real>(
    h: &Matrix<T>,
    z2: &Matrix<T>,
    site: &NetSiteOut<T>,
    scale_w: Option<&Matrix<T>>,
    shift_w: Option<&Matrix<T>>,
    use_skip: bool,
    dout: &Matrix<T>,
    grads: Option<NetHeadGrads<'_, T>>,
    dz2: &mut Matrix<T>,
) -> Matrix<T> {
    let k = if use_skip { T::one() } else { T::zero() };
    let mut dh = dout.clone();
    let (mut gscale, mut gshift) = match grads {
        Some(g) => (g.scale, g.shift),
        None => (None, None),
    };
    if let (Some(s), Some(w)) = (&site.scale, scale_w) {
        dh.data_mut().iter_mut().zip(s.data()).for_each(|(d, &sv)| *d *= k + sv);
        let mut dpre = dout.clone();
        for ((d, &x), &sv) in dpre.data_mut().iter_mut().zip(h.data()).zip(s.data()) {
            *d *= x * sv * (T::one() - sv);
        }
        if let Some((dw, db)) = gscale.take() {
            affine_param_grads(z2, &dpre, dw, db);
        }
        let dz = affine_input_grad(&dpre, w);
        dz2.data_mut().iter_mut().zip(dz.data()).for_each(|(a, &b)| *a += b);
    }
    if let (Some(b), Some(w)) = (&site.shift, shift_w) {
        let mut dpre = dout.clone();
        for (d, &bv) in dpre.data_mut().iter_mut().zip(b.data()) {
            *d *= T::one() - bv * bv;
        }
        if let Some((dw, db)) = gshift.take() {
            affine_param_grads(z2, &dpre, dw, db);
        }
        let dz = affine_input_grad(&dpre, w);
        dz2.data_mut().iter_mut().zip(dz.data()).for_each(|(a, &b)| *a += b);
    }
    dh
}

// ---- vector / variable / constant ----------------------------------------

pub(crate) fn vector_fwd<T: Real>(h: &Matrix<T>, e: &Matrix<T>, w: &[T]) -> Matrix<T> {
    let gate: Vec<T> = w.iter().map(|&v| sigmoid(v)).collect();
    let mut out = h.clone();
    for i in 0..out.rows() {
        let er = e.row(i);
        for ((o, &g), &ev) in out.row_mut(i).iter_mut().zip(&gate).zip(er) {
            *o += g * ev;
        }
    }
    out
}

pub(crate) fn vector_grad<T: Real>(e: &Matrix<T>, w: &[T], dout: &Matrix<T>, dw: &mut Matrix<T>) {
    let dw = dw.data_mut();
    for i in 0..dout.rows() {
        for (j, (&d, &ev)) in dout.row(i).iter().zip(e.row(i)).enumerate() {
            let g = sigmoid(w[j]);
            dw[j] += d * ev * g * (T::one() - g);
        }
    }
}

pub(crate) fn scaled_shift_fwd<T: Real>(h: &Matrix<T>, e: &Matrix<T>, c: T) -> Matrix<T> {
    let mut out = h.clone();
    out.data_mut()
        .iter_mut()
        .zip(e.data())
        .for_each(|(o, &ev)| *o += c * ev);
    out
}

pub(crate) fn variable_grad<T: Real>(e: &Matrix<T>, dout: &Matrix<T>) -> T {
    dout.data().iter().zip(e.data()).map(|(&d, &ev)| d * ev).sum()
}

// ---- public operations ---------------------------------------------------

/// Shift (`x + act(W_eᵀe + b_e)`) or scale (`x ⊙ act(W_eᵀe + b_e)`) by a
/// single control layer.
pub fn apply_control_layer<T: Real>(
    x: &Matrix<T>,
    e: &Matrix<T>,
    p: &ControlLayerParams<T>,
    transform: Transform,
) -> Result<Matrix<T>> {
    if transform == Transform::ShiftScale {
        return Err(Error::InvalidConfig("a control layer either shifts or scales".into()));
    }
    check_width("control layer input width", p.w_e.rows(), e.cols())?;
    check_width("control layer output width", x.cols(), p.w_e.cols())?;
    check_width("control layer bias", p.w_e.cols(), p.b_e.len())?;
    let e = aligned_embedding(x, e)?;
    Ok(control_layer_fwd(x, &e, &p.w_e, &p.b_e, p.activation, transform).0)
}

/// `x + sigmoid(w_e) ⊙ e`
pub fn apply_control_vector<T: Real>(x: &Matrix<T>, e: &Matrix<T>, w_e: &[T]) -> Result<Matrix<T>> {
    check_width("control vector length", x.cols(), w_e.len())?;
    check_width("embedding width", x.cols(), e.cols())?;
    let e = aligned_embedding(x, e)?;
    Ok(vector_fwd(x, &e, w_e))
}

/// `x + w_e · e`
pub fn apply_control_variable<T: Real>(x: &Matrix<T>, e: &Matrix<T>, w_e: T) -> Result<Matrix<T>> {
    check_width("embedding width", x.cols(), e.cols())?;
    let e = aligned_embedding(x, e)?;
    Ok(scaled_shift_fwd(x, &e, w_e))
}

/// Default fixed scale applied to the embedding before shifting.
pub const DEFAULT_CONSTANT_SCALE: f64 = 0.1;

/// `x + c · e` with a non-trainable `c`.
pub fn apply_constant_scale<T: Real>(x: &Matrix<T>, e: &Matrix<T>, c: T) -> Result<Matrix<T>> {
    apply_control_variable(x, e, c)
}

/// `[x | e]`; only defined at the input site (`site == 0`).
pub fn apply_concatenate<T: Real>(x: &Matrix<T>, e: &Matrix<T>, site: usize) -> Result<Matrix<T>> {
    if site != 0 {
        return Err(Error::InvalidConfig(alloc::format!(
            "concatenation requested at hidden site {site}"
        )));
    }
    let e = aligned_embedding(x, e)?;
    x.hconcat(&e)
}

/// Shared trunk → sigmoid scale head and tanh bias head, folded into
/// `h_prev`. With `use_skip` the unadapted `h_prev` is added back:
/// `h_l = h_prev + (h_prev ⊙ s ⊕ b)`; without it `h_l = h_prev ⊙ s ⊕ b`.
pub fn apply_control_network<T: Real>(
    h_prev: &Matrix<T>,
    e: &Matrix<T>,
    p: &ControlNetworkParams<T>,
    use_skip: bool,
) -> Result<Matrix<T>> {
    check_width("control network input width", p.shared[0].weight.rows(), e.cols())?;
    check_width(
        "control network shared width",
        p.shared[0].weight.cols(),
        p.shared[1].weight.rows(),
    )?;
    for head in [&p.scale_head, &p.shift_head].into_iter().flatten() {
        check_width(
            "control network head input",
            p.shared[1].weight.cols(),
            head.weight.rows(),
        )?;
        check_width("control network head width", h_prev.cols(), head.weight.cols())?;
    }
    let e = aligned_embedding(h_prev, e)?;
    let (_, z2) = trunk_fwd(
        &e,
        (&p.shared[0].weight, &p.shared[0].bias),
        (&p.shared[1].weight, &p.shared[1].bias),
    );
    let site = net_site_fwd(
        h_prev,
        &z2,
        p.scale_head.as_ref().map(|d| (&d.weight, d.bias.as_slice())),
        p.shift_head.as_ref().map(|d| (&d.weight, d.bias.as_slice())),
        use_skip,
    );
    Ok(site.out)
}
