use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::layers::{validate_specs, Activation, LayerKind, LayerSpec};
use super::{Mode, Real};
use crate::dataset::OneHotLabel;
use crate::error::{Error, Result};
use crate::seed;

/// Probabilities are clipped to `[PROB_CLIP_MIN, 1]` before every log.
pub const PROB_CLIP_MIN: f64 = 1e-12;

/// Weight matrix and bias of one layer. Parameter-free layers hold empty
/// arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> LayerParams<F> {
    fn zeros_for(spec: &LayerSpec) -> Self {
        let (r, c) = spec.weight_shape().unwrap_or((0, 0));
        Self {
            weight: Array2::zeros((r, c)),
            bias: Array1::zeros(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    specs: Vec<LayerSpec>,
    layers: Vec<LayerParams<F>>,
    input_rows: usize,
    init_seed: u64,
}

impl<F: Real> ModelParams<F> {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))` drawn from
    /// `init_seed`, zero biases.
    pub fn init(specs: Vec<LayerSpec>, input_rows: usize, init_seed: u64) -> Result<Self> {
        validate_specs(&specs, input_rows)?;
        let mut rng = seed::rng(init_seed);
        let layers = specs
            .iter()
            .map(|spec| {
                let mut p = LayerParams::zeros_for(spec);
                if let Some((fan_in, _)) = spec.weight_shape() {
                    let spatial = spec.kernel.0 * spec.kernel.1;
                    let fan_out = spec.out_channels * spatial;
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    p.weight.mapv_inplace(|_| F::of(rng.random_range(-limit..limit)));
                }
                p
            })
            .collect();
        Ok(Self {
            specs,
            layers,
            input_rows,
            init_seed,
        })
    }

    /// All-zero weights and biases.
    pub fn zeros(specs: Vec<LayerSpec>, input_rows: usize) -> Result<Self> {
        validate_specs(&specs, input_rows)?;
        let layers = specs.iter().map(LayerParams::zeros_for).collect();
        Ok(Self {
            specs,
            layers,
            input_rows,
            init_seed: 0,
        })
    }

    pub fn from_parts(
        specs: Vec<LayerSpec>,
        input_rows: usize,
        init_seed: u64,
        layers: Vec<LayerParams<F>>,
    ) -> Result<Self> {
        validate_specs(&specs, input_rows)?;
        if layers.len() != specs.len() {
            return Err(Error::shape(format!("{} layers", specs.len()), layers.len()));
        }
        for (i, (spec, p)) in specs.iter().zip(&layers).enumerate() {
            let expected = LayerParams::<F>::zeros_for(spec);
            if p.weight.dim() != expected.weight.dim() || p.bias.len() != expected.bias.len() {
                return Err(Error::shape(
                    format!("layer {i}: {:?} + {}", expected.weight.dim(), expected.bias.len()),
                    format!("{:?} + {}", p.weight.dim(), p.bias.len()),
                ));
            }
        }
        let model = Self {
            specs,
            layers,
            input_rows,
            init_seed,
        };
        if !model.is_finite() {
            return Err(Error::InvalidArgument("non-finite parameters".into()));
        }
        Ok(model)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[LayerParams<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams<F>] {
        &mut self.layers
    }

    pub fn input_rows(&self) -> usize {
        self.input_rows
    }

    pub fn input_features(&self) -> usize {
        self.input_rows * 2
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn num_classes(&self) -> usize {
        self.specs.last().map_or(0, |s| s.out_channels)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// The same model in another precision.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        ModelParams {
            specs: self.specs.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.mapv(|x| G::of(x.to_f64())),
                    bias: l.bias.mapv(|x| G::of(x.to_f64())),
                })
                .collect(),
            input_rows: self.input_rows,
            init_seed: self.init_seed,
        }
    }

    fn check_input(&self, inputs: &ArrayView2<'_, F>) -> Result<()> {
        if inputs.ncols() != self.input_features() {
            return Err(Error::shape(
                format!("{} features ({}x2)", self.input_features(), self.input_rows),
                format!("{} features", inputs.ncols()),
            ));
        }
        Ok(())
    }

    fn check_frame(&self, frame: &ArrayView2<'_, F>) -> Result<()> {
        if frame.dim() != (self.input_rows, 2) {
            return Err(Error::shape(
                format!("{}x2", self.input_rows),
                format!("{:?}", frame.dim()),
            ));
        }
        Ok(())
    }
}

/// Gradients laid out exactly like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .map(|&g| g.to_f64() * g.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }
}

/// Per-layer state kept from the forward pass for backpropagation.
struct LayerCache<F> {
    /// Conv: im2col patch matrix. Dense/softmax: the layer input.
    input: Array2<F>,
    /// Post-ReLU output before dropout.
    activated: Option<Array2<F>>,
    /// Inverted-dropout mask (0 or 1/(1-p)).
    mask: Option<Array2<F>>,
}

fn im2col<F: Real>(x: &Array2<F>, spec: &LayerSpec) -> Array2<F> {
    let n = x.nrows();
    let (h, w) = spec.in_hw();
    let (kh, kw) = spec.kernel;
    let cin = spec.in_channels;
    let (oh, ow) = (spec.out_h, spec.out_w);
    let k = kh * kw * cin;
    let mut patches = Array2::<F>::zeros((n * oh * ow, k));
    let xs = x.as_standard_layout();
    let src = xs.as_slice().expect("standard layout");
    let dst = patches.as_slice_mut().expect("fresh array");
    let row_len = h * w * cin;
    for b in 0..n {
        let sample = &src[b * row_len..(b + 1) * row_len];
        for i in 0..oh {
            for j in 0..ow {
                let row = ((b * oh + i) * ow + j) * k;
                let mut col = 0;
                for di in 0..kh {
                    for dj in 0..kw {
                        let at = ((i + di) * w + (j + dj)) * cin;
                        dst[row + col..row + col + cin].copy_from_slice(&sample[at..at + cin]);
                        col += cin;
                    }
                }
            }
        }
    }
    patches
}

fn col2im<F: Real>(patches: &Array2<F>, spec: &LayerSpec, n: usize) -> Array2<F> {
    let (h, w) = spec.in_hw();
    let (kh, kw) = spec.kernel;
    let cin = spec.in_channels;
    let (oh, ow) = (spec.out_h, spec.out_w);
    let k = kh * kw * cin;
    let row_len = h * w * cin;
    let mut x = Array2::<F>::zeros((n, row_len));
    let ps = patches.as_standard_layout();
    let src = ps.as_slice().expect("standard layout");
    let dst = x.as_slice_mut().expect("fresh array");
    for b in 0..n {
        let sample = &mut dst[b * row_len..(b + 1) * row_len];
        for i in 0..oh {
            for j in 0..ow {
                let row = ((b * oh + i) * ow + j) * k;
                let mut col = 0;
                for di in 0..kh {
                    for dj in 0..kw {
                        let at = ((i + di) * w + (j + dj)) * cin;
                        for c in 0..cin {
                            sample[at + c] += src[row + col + c];
                        }
                        col += cin;
                    }
                }
            }
        }
    }
    x
}

fn reshape<F: Real>(a: Array2<F>, shape: (usize, usize)) -> Array2<F> {
    let a = if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    };
    a.into_shape_with_order(shape).expect("element count preserved")
}

fn softmax_rows<F: Real>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn dropout_mask<F: Real>(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { F::zero() } else { keep })
}

/// Runs the network on `[batch, features]` inputs. Returns probabilities
/// and, when `keep_cache`, the state backpropagation needs.
fn run_forward<F: Real>(
    model: &ModelParams<F>,
    inputs: Array2<F>,
    mut rng: Option<&mut ChaCha8Rng>,
    keep_cache: bool,
) -> (Array2<F>, Vec<LayerCache<F>>) {
    let n = inputs.nrows();
    let mut x = inputs;
    let mut caches = Vec::with_capacity(if keep_cache { model.specs.len() } else { 0 });
    for (spec, p) in model.specs.iter().zip(&model.layers) {
        if spec.kind == LayerKind::Flatten {
            if keep_cache {
                caches.push(LayerCache {
                    input: Array2::zeros((0, 0)),
                    activated: None,
                    mask: None,
                });
            }
            continue;
        }
        let layer_input = match spec.kind {
            LayerKind::Conv => im2col(&x, spec),
            _ => x,
        };
        let mut z = layer_input.dot(&p.weight);
        z += &p.bias;
        if spec.kind == LayerKind::Conv {
            z = reshape(z, (n, spec.output_features()));
        }
        let mut activated = None;
        let mut mask = None;
        match spec.activation {
            Activation::Relu => {
                z.mapv_inplace(|v| v.max(F::zero()));
                if keep_cache {
                    activated = Some(z.clone());
                }
            }
            Activation::Softmax => softmax_rows(&mut z),
            Activation::None => {}
        }
        if spec.dropout_rate > 0.0 {
            if let Some(rng) = rng.as_deref_mut() {
                let m = dropout_mask::<F>(rng, z.dim(), spec.dropout_rate);
                z *= &m;
                mask = Some(m);
            }
        }
        if keep_cache {
            caches.push(LayerCache {
                input: layer_input,
                activated,
                mask,
            });
        }
        x = z;
    }
    (x, caches)
}

/// Backpropagates `dlogits` (gradient w.r.t. the softmax layer's logits).
fn run_backward<F: Real>(
    model: &ModelParams<F>,
    caches: Vec<LayerCache<F>>,
    dlogits: Array2<F>,
    want_input: bool,
) -> (Gradients<F>, Option<Array2<F>>) {
    let n = dlogits.nrows();
    let mut grads: Vec<LayerParams<F>> = model.specs.iter().map(LayerParams::zeros_for).collect();
    let mut upstream = dlogits;
    let last = model.specs.len() - 1;
    for (l, cache) in caches.into_iter().enumerate().rev() {
        let spec = &model.specs[l];
        if spec.kind == LayerKind::Flatten {
            continue;
        }
        let mut d = upstream;
        if l != last {
            if let Some(m) = &cache.mask {
                d *= m;
            }
            if let Some(a) = &cache.activated {
                ndarray::Zip::from(&mut d).and(a).for_each(|g, &v| {
                    if v <= F::zero() {
                        *g = F::zero();
                    }
                });
            }
        }
        if spec.kind == LayerKind::Conv {
            d = reshape(d, (n * spec.out_h * spec.out_w, spec.out_channels));
        }
        grads[l].weight = cache.input.t().dot(&d);
        grads[l].bias = d.sum_axis(Axis(0));
        let needs_dx = l > 0 || want_input;
        if !needs_dx {
            return (Gradients { layers: grads }, None);
        }
        let dx = d.dot(&model.layers[l].weight.t());
        upstream = match spec.kind {
            LayerKind::Conv => col2im(&dx, spec, n),
            _ => dx,
        };
    }
    (Gradients { layers: grads }, Some(upstream))
}

/// `(p - y)` for each row, zeroed where the true-class probability sits
/// under the clip floor (the clipped loss is flat there), scaled by `scale`.
fn logit_gradient<F: Real>(probs: &Array2<F>, labels: &[usize], scale: F) -> Array2<F> {
    let mut d = probs.clone();
    for (mut row, &y) in d.rows_mut().into_iter().zip(labels) {
        if row[y].to_f64() < PROB_CLIP_MIN {
            row.fill(F::zero());
            continue;
        }
        row[y] -= F::one();
        row.mapv_inplace(|v| v * scale);
    }
    d
}

fn sample_loss<F: Real>(probs: ArrayView1<'_, F>, class: usize) -> f64 {
    -probs[class].to_f64().clamp(PROB_CLIP_MIN, 1.0).ln()
}

fn frame_row<F: Real>(frame: &ArrayView2<'_, F>) -> Array2<F> {
    let flat: Vec<F> = frame.iter().copied().collect();
    Array2::from_shape_vec((1, flat.len()), flat).expect("one row")
}

fn mode_rng(mode: Mode) -> Option<ChaCha8Rng> {
    match mode {
        Mode::Eval => None,
        Mode::Train { dropout_seed } => Some(seed::rng(dropout_seed)),
    }
}

/// Class probabilities for one `len x 2` frame.
pub fn forward<F: Real>(model: &ModelParams<F>, frame: ArrayView2<'_, F>, mode: Mode) -> Result<Array1<F>> {
    model.check_frame(&frame)?;
    let mut rng = mode_rng(mode);
    let (probs, _) = run_forward(model, frame_row(&frame), rng.as_mut(), false);
    Ok(probs.row(0).to_owned())
}

/// Class probabilities for a `[batch, len*2]` matrix of flattened frames.
pub fn forward_batch<F: Real>(model: &ModelParams<F>, inputs: ArrayView2<'_, F>, mode: Mode) -> Result<Array2<F>> {
    model.check_input(&inputs)?;
    let mut rng = mode_rng(mode);
    Ok(run_forward(model, inputs.to_owned(), rng.as_mut(), false).0)
}

/// Categorical cross-entropy `-sum_j y_j ln(clip(p_j))`.
pub fn loss<F: Real>(probs: ArrayView1<'_, F>, label: &OneHotLabel) -> f64 {
    sample_loss(probs, label.class())
}

/// Gradient of the single-frame loss with respect to every weight and bias.
pub fn param_gradients<F: Real>(
    model: &ModelParams<F>,
    frame: ArrayView2<'_, F>,
    label: &OneHotLabel,
    mode: Mode,
) -> Result<Gradients<F>> {
    model.check_frame(&frame)?;
    check_label(model, label)?;
    let mut rng = mode_rng(mode);
    let (probs, caches) = run_forward(model, frame_row(&frame), rng.as_mut(), true);
    let d = logit_gradient(&probs, &[label.class()], F::one());
    Ok(run_backward(model, caches, d, false).0)
}

/// Gradient of the single-frame loss with respect to the input samples
/// (eval mode, no dropout).
pub fn input_gradient<F: Real>(
    model: &ModelParams<F>,
    frame: ArrayView2<'_, F>,
    label: &OneHotLabel,
) -> Result<Array2<F>> {
    model.check_frame(&frame)?;
    check_label(model, label)?;
    let g = input_gradient_batch(model, frame_row(&frame).view(), &[label.class()])?;
    Ok(reshape(g, (model.input_rows, 2)))
}

/// Per-row input gradients of each row's own loss, eval mode.
pub fn input_gradient_batch<F: Real>(
    model: &ModelParams<F>,
    inputs: ArrayView2<'_, F>,
    classes: &[usize],
) -> Result<Array2<F>> {
    model.check_input(&inputs)?;
    if classes.len() != inputs.nrows() {
        return Err(Error::shape(format!("{} labels", inputs.nrows()), classes.len()));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= model.num_classes()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside {} classes",
            model.num_classes()
        )));
    }
    let (probs, caches) = run_forward(model, inputs.to_owned(), None, true);
    let d = logit_gradient(&probs, classes, F::one());
    Ok(run_backward(model, caches, d, true)
        .1
        .expect("input gradient requested"))
}

fn check_label<F: Real>(model: &ModelParams<F>, label: &OneHotLabel) -> Result<()> {
    if label.num_classes() != model.num_classes() {
        return Err(Error::shape(
            format!("{} classes", model.num_classes()),
            format!("{} classes", label.num_classes()),
        ));
    }
    Ok(())
}

/// Mean-loss gradient over a mini-batch in training mode. Returns the summed
/// per-sample loss alongside.
pub(crate) fn batch_gradients<F: Real>(
    model: &ModelParams<F>,
    inputs: Array2<F>,
    classes: &[usize],
    rng: &mut ChaCha8Rng,
) -> (f64, Gradients<F>) {
    let n = inputs.nrows();
    let (probs, caches) = run_forward(model, inputs, Some(rng), true);
    let loss_sum = probs
        .rows()
        .into_iter()
        .zip(classes)
        .map(|(row, &c)| sample_loss(row, c))
        .sum();
    let d = logit_gradient(&probs, classes, F::one() / F::of(n as f64));
    (loss_sum, run_backward(model, caches, d, false).0)
}
