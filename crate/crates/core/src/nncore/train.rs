use ndarray::{Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{batch_gradients, Gradients, ModelParams};
use super::Real;
use crate::dataset::SignalDataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 32,
            learning_rate: 0.03,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained<F> {
    pub model: ModelParams<F>,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// `theta <- theta - lr * g` for every parameter.
pub fn sgd_step<F: Real>(model: &mut ModelParams<F>, grads: &Gradients<F>, learning_rate: f64) {
    let step = F::of(-learning_rate);
    for (p, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
        Zip::from(&mut p.weight).and(&g.weight).for_each(|w, &d| *w += step * d);
        Zip::from(&mut p.bias).and(&g.bias).for_each(|b, &d| *b += step * d);
    }
}

/// Flattens the dataset's frames into a `[frames, len*2]` matrix.
pub(crate) fn design_matrix<F: Real>(data: &SignalDataset) -> Array2<F> {
    let width = data.frame_len * 2;
    let mut x = Array2::<F>::zeros((data.frames.len(), width));
    for (mut row, f) in x.rows_mut().into_iter().zip(&data.frames) {
        for (dst, &src) in row.iter_mut().zip(f.samples.iter()) {
            *dst = F::of(f64::from(src));
        }
    }
    x
}

fn gather<F: Real>(x: &ArrayView2<'_, F>, rows: &[usize]) -> Array2<F> {
    let mut out = Array2::<F>::zeros((rows.len(), x.ncols()));
    for (mut dst, &r) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&x.row(r));
    }
    out
}

/// Mini-batch SGD on the mean cross-entropy. The epoch-`e` permutation is
/// drawn from `derive(shuffle_seed, [e])` and the dropout masks of batch `k`
/// from `derive(shuffle_seed, [e, k])`, so runs are bit-reproducible.
pub fn train<F: Real>(model: ModelParams<F>, train_set: &SignalDataset, cfg: &TrainConfig) -> Result<Trained<F>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if train_set.frame_len != model.input_rows() {
        return Err(Error::shape(
            format!("frames of length {}", model.input_rows()),
            format!("length {}", train_set.frame_len),
        ));
    }
    if train_set.num_classes() != model.num_classes() {
        return Err(Error::shape(
            format!("{} classes", model.num_classes()),
            format!("{} classes", train_set.num_classes()),
        ));
    }
    let x = design_matrix::<F>(train_set);
    let labels: Vec<usize> = train_set.frames.iter().map(|f| f.scheme_index).collect();
    let mut model = model;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(cfg.shuffle_seed, &[epoch as u64])));
        let mut total = 0.0;
        for (k, batch) in order.chunks(cfg.batch_size).enumerate() {
            let inputs = gather(&x.view(), batch);
            let classes: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut rng = seed::rng(seed::derive(cfg.shuffle_seed, &[epoch as u64, k as u64]));
            let (loss_sum, grads) = batch_gradients(&model, inputs, &classes, &mut rng);
            if !loss_sum.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, member: None });
            }
            total += loss_sum;
            sgd_step(&mut model, &grads, cfg.learning_rate);
        }
        let mean = total / labels.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch, member: None });
        }
        loss_trace.push(mean);
    }
    Ok(Trained { model, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::layers::LayerSpec;
    use crate::siggen::{generate_frames, Fading, GeneratorConfig, ModulationScheme};

    fn toy_set() -> SignalDataset {
        generate_frames(&GeneratorConfig {
            schemes: vec![ModulationScheme::bpsk(), ModulationScheme::ook()],
            snr_grid: vec![20.0],
            frames_per_cell: 40,
            frame_len: 16,
            seed: 3,
            fading: Fading::Identity,
        })
        .unwrap()
    }

    fn toy_model(seed: u64) -> ModelParams<f64> {
        let specs = vec![
            LayerSpec::conv(1, 4, (3, 2), (14, 1), 0.2),
            LayerSpec::flatten(56),
            LayerSpec::dense(56, 8, 0.0),
            LayerSpec::softmax_output(8, 2),
        ];
        ModelParams::init(specs, 16, seed).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 8,
            batch_size: 8,
            learning_rate: 0.01,
            shuffle_seed: 5,
        }
    }

    #[test]
    fn loss_decreases_on_separable_toy() {
        let out = train(toy_model(1), &toy_set(), &cfg()).unwrap();
        assert_eq!(out.loss_trace.len(), 8);
        assert!(out.loss_trace.last() < out.loss_trace.first(), "{:?}", out.loss_trace);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let a = train(toy_model(1), &toy_set(), &cfg()).unwrap();
        let b = train(toy_model(1), &toy_set(), &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_rejected() {
        let bad = TrainConfig { epochs: 0, ..cfg() };
        assert!(train(toy_model(1), &toy_set(), &bad).is_err());
        let bad = TrainConfig { batch_size: 0, ..cfg() };
        assert!(train(toy_model(1), &toy_set(), &bad).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg()
        };
        assert!(train(toy_model(1), &toy_set(), &bad).is_err());
    }

    #[test]
    fn zero_step_leaves_parameters_unchanged() {
        let mut m = toy_model(2);
        let before = m.clone();
        let set = toy_set();
        let x = design_matrix::<f64>(&set);
        let classes: Vec<usize> = set.frames.iter().map(|f| f.scheme_index).collect();
        let (_, g) = batch_gradients(&m, x, &classes, &mut crate::seed::rng(0));
        assert!(g.norm() > 0.0);
        sgd_step(&mut m, &g, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let bad = TrainConfig {
            learning_rate: 1e300,
            ..cfg()
        };
        assert!(matches!(
            train(toy_model(1), &toy_set(), &bad),
            Err(Error::Divergence { .. })
        ));
    }
}
