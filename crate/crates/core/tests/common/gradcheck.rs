//! Analytic gradients against central finite differences.

use amc_uq::dataset::OneHotLabel;
use amc_uq::nncore::{forward, input_gradient, loss, param_gradients, LayerSpec, Mode, ModelParams};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

pub struct Case {
    pub model: ModelParams<f64>,
    pub frame: Array2<f64>,
    pub label: OneHotLabel,
    pub mode: Mode,
}

/// Up to two conv layers, an optional hidden dense layer, 2-4 classes.
pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let rows = rng.random_range(5..=10);
    let classes = rng.random_range(2..=4);
    let mut specs = Vec::new();
    let (mut h, mut w, mut c) = (rows, 2usize, 1usize);
    for _ in 0..rng.random_range(1..=2) {
        let kh = rng.random_range(1..=3usize).min(h);
        let kw = rng.random_range(1..=w);
        let filters = rng.random_range(1..=3);
        let dropout = if rng.random_bool(0.5) { 0.3 } else { 0.0 };
        let out = (h - kh + 1, w - kw + 1);
        specs.push(LayerSpec::conv(c, filters, (kh, kw), out, dropout));
        (h, w, c) = (out.0, out.1, filters);
    }
    let mut features = h * w * c;
    specs.push(LayerSpec::flatten(features));
    if rng.random_bool(0.5) {
        let units = rng.random_range(2..=5);
        specs.push(LayerSpec::dense(features, units, 0.2));
        features = units;
    }
    specs.push(LayerSpec::softmax_output(features, classes));

    let mut model = ModelParams::<f64>::init(specs, rows, rng.random()).unwrap();
    for layer in model.layers_mut() {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let frame = Array2::from_shape_fn((rows, 2), |_| rng.random_range(-2.0..2.0));
    let label = OneHotLabel::new(rng.random_range(0..classes), classes).unwrap();
    let mode = if rng.random_bool(0.5) {
        Mode::Train {
            dropout_seed: rng.random(),
        }
    } else {
        Mode::Eval
    };
    Case {
        model,
        frame,
        label,
        mode,
    }
}

pub fn loss_at(model: &ModelParams<f64>, frame: &Array2<f64>, label: &OneHotLabel, mode: Mode) -> f64 {
    loss(forward(model, frame.view(), mode).unwrap().view(), label)
}

/// Largest relative error over every weight and bias.
pub fn param_error(case: &Case) -> f64 {
    let grads = param_gradients(&case.model, case.frame.view(), &case.label, case.mode).unwrap();
    let mut worst: f64 = 0.0;
    for li in 0..case.model.layers().len() {
        for which in 0..2 {
            let count = if which == 0 {
                case.model.layers()[li].weight.len()
            } else {
                case.model.layers()[li].bias.len()
            };
            for k in 0..count {
                let eval = |delta: f64| {
                    let mut m = case.model.clone();
                    let l = &mut m.layers_mut()[li];
                    if which == 0 {
                        let v = l.weight.as_slice_mut().unwrap();
                        v[k] += delta;
                    } else {
                        l.bias[k] += delta;
                    }
                    loss_at(&m, &case.frame, &case.label, case.mode)
                };
                let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
                let g = &grads.layers[li];
                let analytic = if which == 0 {
                    g.weight.as_slice().unwrap()[k]
                } else {
                    g.bias[k]
                };
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

pub fn input_error(case: &Case) -> f64 {
    let grad = input_gradient(&case.model, case.frame.view(), &case.label).unwrap();
    let mut worst: f64 = 0.0;
    for idx in ndarray::indices(case.frame.dim()) {
        let eval = |delta: f64| {
            let mut f = case.frame.clone();
            f[idx] += delta;
            loss_at(&case.model, &f, &case.label, Mode::Eval)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        worst = worst.max(rel_err(grad[idx], numeric));
    }
    worst
}
