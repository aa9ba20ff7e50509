use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::matrix::Matrix;
use crate::nn::{grad_check, Activation, Batch, Mlp, MlpConfig, Mode, ParamGroup};

fn m(rows: &[&[f64]]) -> Matrix<f64> {
    let cols = rows[0].len();
    Matrix::new(rows.len(), cols, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
}

fn close(a: &Matrix<f64>, b: &[f64], tol: f64) {
    assert_eq!(a.data().len(), b.len());
    for (x, y) in a.data().iter().zip(b) {
        assert!((x - y).abs() <= tol, "{:?} vs {:?}", a.data(), b);
    }
}

fn zero_dense(rows: usize, cols: usize) -> DenseParams<f64> {
    DenseParams {
        weight: Matrix::zeros(rows, cols),
        bias: vec![0.0; cols],
    }
}

#[test]
fn control_layer_zero_linear_shift_is_identity() {
    let x = m(&[&[1.0, -2.0, 3.0]]);
    let e = m(&[&[5.0, 7.0]]);
    let p = ControlLayerParams {
        w_e: Matrix::zeros(2, 3),
        b_e: vec![0.0; 3],
        activation: Activation::Linear,
    };
    assert_eq!(apply_control_layer(&x, &e, &p, Transform::Shift).unwrap(), x);
}

#[test]
fn control_layer_tanh_shift_hand_value() {
    let x = m(&[&[1.0]]);
    let e = m(&[&[1.0]]);
    let p = ControlLayerParams {
        w_e: m(&[&[0.25]]),
        b_e: vec![0.25],
        activation: Activation::Tanh,
    };
    let out = apply_control_layer(&x, &e, &p, Transform::Shift).unwrap();
    close(&out, &[1.462_117_157_260_01], 1e-12);
}

#[test]
fn control_layer_sigmoid_scale_halves() {
    let x = m(&[&[2.0, -4.0]]);
    let e = m(&[&[3.0]]);
    let p = ControlLayerParams {
        w_e: Matrix::zeros(1, 2),
        b_e: vec![0.0; 2],
        activation: Activation::Sigmoid,
    };
    close(
        &apply_control_layer(&x, &e, &p, Transform::Scale).unwrap(),
        &[1.0, -2.0],
        0.0,
    );
}

#[test]
fn control_layer_rejects_mismatched_width() {
    let p = ControlLayerParams {
        w_e: Matrix::zeros(2, 3),
        b_e: vec![0.0; 3],
        activation: Activation::Linear,
    };
    let err = apply_control_layer(&m(&[&[1.0, 2.0]]), &m(&[&[0.0, 0.0]]), &p, Transform::Shift);
    assert!(matches!(err, Err(Error::Shape { .. })));
}

#[test]
fn control_vector_examples() {
    let x = m(&[&[1.0, 1.0]]);
    let e = m(&[&[2.0, 4.0]]);
    close(&apply_control_vector(&x, &e, &[0.0, 0.0]).unwrap(), &[2.0, 3.0], 1e-15);
    close(
        &apply_control_vector(&x, &e, &[-50.0, -50.0]).unwrap(),
        &[1.0, 1.0],
        1e-6,
    );
    close(&apply_control_vector(&x, &e, &[50.0, 50.0]).unwrap(), &[3.0, 5.0], 1e-6);
    assert!(apply_control_vector(&x, &e, &[0.0]).is_err());
}

#[test]
fn control_variable_examples() {
    let x = m(&[&[1.0, 2.0]]);
    let e = m(&[&[3.0, 4.0]]);
    assert_eq!(apply_control_variable(&x, &e, 0.0).unwrap(), x);
    close(&apply_control_variable(&x, &e, 1.0).unwrap(), &[4.0, 6.0], 0.0);
    assert!(apply_control_variable(&x, &m(&[&[1.0]]), 1.0).is_err());
}

#[test]
fn constant_scale_examples() {
    let x = m(&[&[1.0, 2.0]]);
    let e = m(&[&[10.0, 20.0]]);
    assert_eq!(apply_constant_scale(&x, &e, 0.0).unwrap(), x);
    close(
        &apply_constant_scale(&x, &e, DEFAULT_CONSTANT_SCALE).unwrap(),
        &[2.0, 4.0],
        1e-15,
    );
}

#[test]
fn concatenate_examples() {
    let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let e = m(&[&[5.0, 6.0, 7.0]]);
    let out = apply_concatenate(&x, &e, 0).unwrap();
    assert_eq!(out.cols(), 5);
    assert_eq!(out.row(1), &[3.0, 4.0, 5.0, 6.0, 7.0]);
    assert!(matches!(apply_concatenate(&x, &e, 1), Err(Error::InvalidConfig(_))));

    let per_frame = m(&[&[0.0], &[1.0]]);
    let out = apply_concatenate(&x, &per_frame, 0).unwrap();
    assert_ne!(out.row(0)[2], out.row(1)[2]);
}

/// Trunk whose second layer outputs exactly `z2`, regardless of `e`.
fn constant_trunk(e_dim: usize, z2: &[f64]) -> [DenseParams<f64>; 2] {
    let u = z2.len();
    [
        zero_dense(e_dim, u),
        DenseParams {
            weight: Matrix::zeros(u, u),
            bias: z2.to_vec(),
        },
    ]
}

#[test]
fn control_network_identity_without_skip() {
    // z2 = 1; scale head saturates sigmoid at 1, shift head gives tanh(0) = 0.
    let h = m(&[&[2.0, -3.0]]);
    let e = m(&[&[0.7]]);
    let p = ControlNetworkParams {
        shared: constant_trunk(1, &[1.0]),
        scale_head: Some(DenseParams {
            weight: Matrix::zeros(1, 2),
            bias: vec![60.0; 2],
        }),
        shift_head: Some(zero_dense(1, 2)),
    };
    close(&apply_control_network(&h, &e, &p, false).unwrap(), &[2.0, -3.0], 1e-12);
}

#[test]
fn control_network_skip_hand_value() {
    let h = m(&[&[2.0]]);
    let e = m(&[&[1.0]]);
    let p = ControlNetworkParams {
        shared: constant_trunk(1, &[1.0]),
        scale_head: Some(zero_dense(1, 1)),
        shift_head: Some(DenseParams {
            weight: Matrix::zeros(1, 1),
            bias: vec![0.25f64.atanh()],
        }),
    };
    close(&apply_control_network(&h, &e, &p, true).unwrap(), &[3.25], 1e-12);
}

#[test]
fn control_network_head_ranges() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut dense = |r: usize, c: usize| DenseParams {
        weight: Matrix::from_fn(r, c, |_, _| rng.random_range(-30.0..30.0)),
        bias: (0..c).map(|_| rng.random_range(-30.0..30.0)).collect(),
    };
    let p = ControlNetworkParams {
        shared: [dense(3, 5), dense(5, 5)],
        scale_head: Some(dense(5, 4)),
        shift_head: None,
    };
    let h = Matrix::filled(6, 4, 1.0);
    let e = Matrix::from_fn(6, 3, |i, j| (i as f64 - j as f64) * 2.0);
    let out = apply_control_network(&h, &e, &p, false).unwrap();
    assert!(out.data().iter().all(|&s| (0.0..=1.0).contains(&s)));
}

#[test]
fn count_examples() {
    let dims = |d: usize, site: usize| ConditioningDims {
        embed_dim: d,
        site_dims: vec![site, site],
        first_layer_units: 7,
    };
    let layer = ConditioningSpec::new(
        Mechanism::ControlLayer {
            activation: Activation::Linear,
            transform: Transform::Shift,
        },
        SiteSelection::InputOnly,
    );
    assert_eq!(count_conditioning_params(&layer, &dims(10, 20)).unwrap(), 220);
    let var = ConditioningSpec::new(Mechanism::ControlVariable, SiteSelection::InputOnly);
    assert_eq!(count_conditioning_params(&var, &dims(5, 5)).unwrap(), 1);
    let constant = ConditioningSpec::new(
        Mechanism::ConstantScale {
            c: DEFAULT_CONSTANT_SCALE,
        },
        SiteSelection::InputOnly,
    );
    assert_eq!(count_conditioning_params(&constant, &dims(5, 5)).unwrap(), 0);
    let cat = ConditioningSpec::new(Mechanism::Concatenate, SiteSelection::InputOnly);
    assert_eq!(count_conditioning_params(&cat, &dims(3, 5)).unwrap(), 21);
}

#[test]
fn spec_validation() {
    let sites = [4, 6, 6];
    let cat_hidden = ConditioningSpec::new(Mechanism::Concatenate, SiteSelection::AllHidden);
    assert!(cat_hidden.validate(2, &sites).is_err());
    let vec_input = ConditioningSpec::new(Mechanism::ControlVector, SiteSelection::InputOnly);
    assert!(vec_input.validate(4, &sites).is_ok());
    assert!(vec_input.validate(6, &sites).is_err());
    let bad_layer = ConditioningSpec::new(
        Mechanism::ControlLayer {
            activation: Activation::Tanh,
            transform: Transform::ShiftScale,
        },
        SiteSelection::InputOnly,
    );
    assert!(bad_layer.validate(4, &sites).is_err());
    assert_eq!(SiteSelection::AllHidden.resolve(3).unwrap(), vec![1, 2]);
    assert!(SiteSelection::Layers(vec![3]).resolve(3).is_err());
}

fn network(shared_units: usize, use_skip: bool, transform: Transform) -> Mechanism {
    Mechanism::ControlNetwork {
        shared_units,
        use_skip,
        transform,
    }
}

fn all_mechanisms() -> Vec<Mechanism> {
    let mut v = vec![
        network(6, false, Transform::ShiftScale),
        network(6, true, Transform::ShiftScale),
        network(6, true, Transform::Scale),
        network(6, false, Transform::Shift),
    ];
    for activation in [
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Linear,
    ] {
        for transform in [Transform::Shift, Transform::Scale] {
            v.push(Mechanism::ControlLayer { activation, transform });
        }
    }
    v.extend([
        Mechanism::ControlVector,
        Mechanism::ControlVariable,
        Mechanism::ConstantScale {
            c: DEFAULT_CONSTANT_SCALE,
        },
        Mechanism::Concatenate,
    ]);
    v
}

fn small_model(batch_norm: bool) -> Mlp<f32> {
    let cfg = MlpConfig {
        input_dim: 8,
        hidden: vec![8, 8],
        num_classes: 8,
        activation: Activation::Relu,
        batch_norm,
    };
    Mlp::new(cfg, 21).unwrap()
}

/// Moves conditioning parameters away from their neutral initial values so
/// that every path carries a non-trivial gradient.
fn perturb_conditioning(model: &mut Mlp<f32>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.store_mut().iter_mut() {
        if p.group == ParamGroup::Conditioning {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.5f32..0.5);
            }
        }
    }
}

#[test]
fn every_mechanism_passes_grad_check_at_every_site() {
    let x = Matrix::from_fn(8, 8, |i, j| ((i * 8 + j) as f32 * 1.3 + 0.2).sin());
    let labels: Vec<usize> = (0..8).collect();
    let utterance_e = Matrix::from_fn(1, 8, |_, j| (j as f32 * 0.9).cos());
    let frame_e = Matrix::from_fn(8, 8, |i, j| ((i + 2 * j) as f32 * 0.7).cos());
    for mechanism in all_mechanisms() {
        let selections = if mechanism == Mechanism::Concatenate {
            vec![SiteSelection::InputOnly]
        } else {
            vec![
                SiteSelection::InputOnly,
                SiteSelection::Layers(vec![1]),
                SiteSelection::AllHidden,
            ]
        };
        for sites in selections {
            for (mode, bn) in [(Mode::Train, true), (Mode::Eval, false)] {
                let spec = ConditioningSpec::new(mechanism.clone(), sites.clone());
                let mut model = small_model(bn).with_conditioning(&spec, 8, 3).unwrap();
                perturb_conditioning(&mut model, 9);
                for e in [&utterance_e, &frame_e] {
                    let batch = Batch {
                        x: &x,
                        emb: Some(e),
                        labels: &labels,
                    };
                    let err = grad_check(&model, batch, 1e-3, mode).unwrap();
                    assert!(err < 1e-4, "{spec} bn={bn} rows={}: {err}", e.rows());
                }
            }
        }
    }
}

#[test]
fn neutral_init_stays_close_to_unconditioned_net() {
    let base = small_model(true);
    let x = Matrix::from_fn(8, 8, |i, j| ((i * 8 + j) as f32 * 0.37).sin());
    let e = Matrix::from_fn(1, 8, |_, j| j as f32 * 0.1 - 0.3);
    let reference = base.logits(&x, None).unwrap();
    for mechanism in all_mechanisms() {
        if matches!(mechanism, Mechanism::ConstantScale { .. }) {
            continue;
        }
        let spec = ConditioningSpec::new(mechanism, SiteSelection::InputOnly);
        let model = base.with_conditioning(&spec, 8, 3).unwrap();
        let out = model.logits(&x, Some(&e)).unwrap();
        let diff = out
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 0.1, "{spec}: {diff}");
    }
}

#[test]
fn conditioning_is_driven_by_the_embedding() {
    let spec = ConditioningSpec::new(network(6, false, Transform::ShiftScale), SiteSelection::AllHidden);
    let mut model = small_model(false).with_conditioning(&spec, 3, 1).unwrap();
    perturb_conditioning(&mut model, 2);
    let x = Matrix::from_fn(4, 8, |i, j| (i + j) as f32 * 0.1);
    let a = model.logits(&x, Some(&Matrix::row_vector(&[1.0, 0.0, 0.0]))).unwrap();
    let b = model.logits(&x, Some(&Matrix::row_vector(&[0.0, 0.0, 1.0]))).unwrap();
    assert_ne!(a, b);
    assert!(matches!(model.logits(&x, None), Err(Error::MissingEmbedding(_))));
}

#[test]
fn conditioning_parameters_counted_in_store() {
    let base = small_model(true);
    let dims = ConditioningDims {
        embed_dim: 8,
        site_dims: base.site_dims(),
        first_layer_units: 8,
    };
    for mechanism in all_mechanisms() {
        let spec = ConditioningSpec::new(mechanism, SiteSelection::InputOnly);
        let model = base.with_conditioning(&spec, 8, 0).unwrap();
        let added = model.num_params(ParamGroup::Conditioning) + model.num_params(ParamGroup::Main)
            - base.num_params(ParamGroup::Main);
        assert_eq!(added, count_conditioning_params(&spec, &dims).unwrap(), "{spec}");
    }
}

fn mechanism_count(mechanism: Mechanism, d: usize) -> usize {
    let spec = ConditioningSpec::new(mechanism, SiteSelection::InputOnly);
    let dims = ConditioningDims {
        embed_dim: d,
        site_dims: vec![d, d],
        first_layer_units: d,
    };
    count_conditioning_params(&spec, &dims).unwrap()
}

proptest! {
    #[test]
    fn parameter_count_ladder(d in 2usize..64, extra in 0usize..64) {
        let u = d + extra;
        let counts = [
            mechanism_count(network(u, false, Transform::ShiftScale), d),
            mechanism_count(
                Mechanism::ControlLayer { activation: Activation::Tanh, transform: Transform::Shift },
                d,
            ),
            mechanism_count(Mechanism::ControlVector, d),
            mechanism_count(Mechanism::ControlVariable, d),
            mechanism_count(Mechanism::ConstantScale { c: 0.1 }, d),
        ];
        prop_assert!(counts.windows(2).all(|w| w[0] > w[1]), "{:?}", counts);
        prop_assert_eq!(counts[2], d);
        prop_assert_eq!(counts[3], 1);
        prop_assert_eq!(counts[4], 0);
    }

    #[test]
    fn zero_parameters_reduce_to_identity(
        xs in proptest::collection::vec(-10.0f64..10.0, 6),
        es in proptest::collection::vec(-10.0f64..10.0, 3),
    ) {
        let x = Matrix::new(2, 3, xs).unwrap();
        let e = Matrix::new(1, 3, es).unwrap();
        for activation in [Activation::Linear, Activation::Tanh] {
            let p = ControlLayerParams { w_e: Matrix::zeros(3, 3), b_e: vec![0.0; 3], activation };
            prop_assert_eq!(apply_control_layer(&x, &e, &p, Transform::Shift).unwrap(), x.clone());
        }
        prop_assert_eq!(apply_control_variable(&x, &e, 0.0).unwrap(), x.clone());
        prop_assert_eq!(apply_constant_scale(&x, &e, 0.0).unwrap(), x.clone());
        let half = apply_control_vector(&x, &e, &[0.0; 3]).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                prop_assert!((half.get(i, j) - (x.get(i, j) + 0.5 * e.get(0, j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn utterance_broadcast_is_frame_permutation_equivariant(
        seed in 0u64..500,
        frames in 2usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::<f64>::from_fn(frames, 3, |_, _| rng.random_range(-2.0..2.0));
        let e = Matrix::<f64>::from_fn(1, 2, |_, _| rng.random_range(-2.0..2.0));
        let mut perm: Vec<usize> = (0..frames).collect();
        for i in (1..frames).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let p = ControlLayerParams {
            w_e: Matrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)),
            b_e: vec![0.1, -0.2, 0.3],
            activation: Activation::Sigmoid,
        };
        let net = ControlNetworkParams {
            shared: [
                DenseParams { weight: Matrix::from_fn(2, 4, |i, j| (i + j) as f64 * 0.3 - 0.5), bias: vec![0.1; 4] },
                DenseParams { weight: Matrix::from_fn(4, 4, |i, j| (i * j) as f64 * 0.2 - 0.4), bias: vec![0.2; 4] },
            ],
            scale_head: Some(DenseParams { weight: Matrix::filled(4, 3, 0.3), bias: vec![0.0; 3] }),
            shift_head: Some(DenseParams { weight: Matrix::filled(4, 3, -0.2), bias: vec![0.1; 3] }),
        };
        let xp = x.select_rows(&perm);
        for transform in [Transform::Shift, Transform::Scale] {
            let out = apply_control_layer(&x, &e, &p, transform).unwrap();
            prop_assert_eq!(apply_control_layer(&xp, &e, &p, transform).unwrap(), out.select_rows(&perm));
        }
        let out = apply_control_network(&x, &e, &net, true).unwrap();
        prop_assert_eq!(apply_control_network(&xp, &e, &net, true).unwrap(), out.select_rows(&perm));
    }
}
