//! Analytic gradients against central finite differences on random tiny
//! networks, in double precision.

mod common;

use amc_uq::dataset::OneHotLabel;
use amc_uq::nncore::{input_gradient, LayerSpec, Mode, ModelParams};
use common::gradcheck::{input_error, param_error, Case, TOLERANCE};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hundred_random_models_match_finite_differences() {
    common::criteria::gradient_checks().unwrap();
}

#[test]
fn two_filter_three_class_model() {
    let specs = vec![
        LayerSpec::conv(1, 2, (3, 2), (6, 1), 0.0),
        LayerSpec::flatten(12),
        LayerSpec::softmax_output(12, 3),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = ModelParams::<f64>::init(specs, 8, 17).unwrap();
    model.layers_mut()[0].bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let case = Case {
        model,
        frame: Array2::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0)),
        label: OneHotLabel::new(1, 3).unwrap(),
        mode: Mode::Eval,
    };
    assert!(param_error(&case) < TOLERANCE);
    assert!(input_error(&case) < TOLERANCE);
}

/// For a linear two-class softmax model the input gradient is
/// `W (p - y)`, so swapping the label flips every sign.
#[test]
fn linear_two_class_gradient_closed_form() {
    let rows = 4;
    let specs = vec![LayerSpec::flatten(rows * 2), LayerSpec::softmax_output(rows * 2, 2)];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut model = ModelParams::<f64>::zeros(specs, rows).unwrap();
    model.layers_mut()[1]
        .weight
        .mapv_inplace(|_| rng.random_range(-1.0..1.0));
    model.layers_mut()[1].bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let frame = Array2::from_shape_fn((rows, 2), |_| rng.random_range(-1.0..1.0));

    let w = model.layers()[1].weight.clone();
    let b = model.layers()[1].bias.clone();
    let x = Array1::from_iter(frame.iter().copied());
    let z = x.dot(&w) + &b;
    let m = z.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let e = z.mapv(|v| (v - m).exp());
    let p = &e / e.sum();

    let mut signs = Vec::new();
    for class in 0..2 {
        let label = OneHotLabel::new(class, 2).unwrap();
        let y = label.vector();
        let expected = w.dot(&(&p - &y));
        let got = input_gradient(&model, frame.view(), &label).unwrap();
        for (g, ex) in got.iter().zip(expected.iter()) {
            assert!((g - ex).abs() < 1e-12, "{g} vs {ex}");
        }
        signs.push(got.mapv(f64::signum));
    }
    assert_eq!(signs[0], signs[1].mapv(|s| -s));
}
