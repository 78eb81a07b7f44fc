//! Deep ensembles: training, aggregation and confidence intervals.
//!
//! An ensemble holds `B` identically shaped classifiers trained from
//! different seeds. Its prediction for a frame is the weighted average of
//! the members' softmax outputs; the unbiased sample variance of the member
//! outputs gives per-class confidence intervals `mean +- z * sqrt(S^2 / B)`.
//!
//! Three systems share this machinery:
//!
//! * the equal-weight ensemble (every weight `1/B`),
//! * the standalone classifier (a one-member ensemble with zero variance),
//! * the SNR-aware weighted ensemble, whose member `b` only sees the `b`-th
//!   SNR sub-band and whose weights come from [`entropy_weights`].

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::SignalDataset;
use crate::error::{Error, Result};
use crate::nncore::{self, LayerSpec, Mode, ModelParams, Precision, Real, TrainConfig, PROB_CLIP_MIN};
use crate::seed;

/// Rows per forward call when scoring whole datasets.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel<F> {
    members: Vec<ModelParams<F>>,
    weights: Vec<f64>,
}

impl<F: Real> EnsembleModel<F> {
    pub fn equal(members: Vec<ModelParams<F>>) -> Result<Self> {
        let b = members.len();
        Self::weighted(members, vec![1.0 / b.max(1) as f64; b])
    }

    pub fn weighted(members: Vec<ModelParams<F>>, weights: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        if weights.len() != members.len() {
            return Err(Error::shape(format!("{} weights", members.len()), weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "negative or non-finite weight in {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        let first = &members[0];
        if members
            .iter()
            .any(|m| m.specs() != first.specs() || m.input_rows() != first.input_rows())
        {
            return Err(Error::InvalidArgument("ensemble members differ in architecture".into()));
        }
        Ok(Self { members, weights })
    }

    pub fn members(&self) -> &[ModelParams<F>] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Writes `ensemble.json` plus one weights file per member into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::with_capacity(self.members.len());
        for (b, m) in self.members.iter().enumerate() {
            let name = format!("member_{b:03}.weights");
            m.save(dir.join(&name))?;
            files.push(name);
        }
        let manifest = EnsembleManifest {
            format: "amc-ensemble".into(),
            version: 1,
            precision: F::PRECISION,
            weights: self.weights.clone(),
            members: files,
        };
        let path = dir.join("ensemble.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("ensemble.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: EnsembleManifest =
            serde_json::from_slice(&text).map_err(|e| Error::CorruptHeader(format!("{}: {e}", path.display())))?;
        if m.version != 1 {
            return Err(Error::VersionMismatch {
                found: m.version,
                expected: 1,
            });
        }
        let members = m
            .members
            .iter()
            .map(|f| ModelParams::load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        Self::weighted(members, m.weights)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    format: String,
    version: u32,
    precision: Precision,
    weights: Vec<f64>,
    members: Vec<String>,
}

/// Aggregated prediction for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    /// `B x C` member softmax outputs.
    pub member_probs: Array2<f64>,
    pub mean_probs: Array1<f64>,
    /// Unbiased sample variance of each class probability across members
    /// (zero for a single member).
    pub per_class_variance: Array1<f64>,
}

impl EnsemblePrediction {
    /// Aggregates member rows with the given weights. The variance ignores
    /// the weights.
    pub fn from_members(member_probs: Array2<f64>, weights: &[f64]) -> Result<Self> {
        let (b, c) = member_probs.dim();
        if b == 0 || weights.len() != b {
            return Err(Error::shape(format!("{b} weights"), weights.len()));
        }
        let mut mean = Array1::<f64>::zeros(c);
        if weights.iter().all(|&w| w == weights[0]) {
            // sum then divide: B agreeing one-hot rows average to exactly 1
            for row in member_probs.rows() {
                mean += &row;
            }
            mean /= b as f64;
        } else {
            for (row, &w) in member_probs.rows().into_iter().zip(weights) {
                mean.scaled_add(w, &row);
            }
        }
        let variance = if b < 2 {
            Array1::zeros(c)
        } else {
            // shifted by the first member so identical rows give exactly 0
            let base = member_probs.row(0);
            Array1::from_shape_fn(c, |j| {
                let (mut sum, mut sq) = (0.0, 0.0);
                for i in 0..b {
                    let d = member_probs[[i, j]] - base[j];
                    sum += d;
                    sq += d * d;
                }
                ((sq - sum * sum / b as f64) / (b - 1) as f64).max(0.0)
            })
        };
        Ok(Self {
            member_probs,
            mean_probs: mean,
            per_class_variance: variance,
        })
    }

    pub fn num_members(&self) -> usize {
        self.member_probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.mean_probs.len()
    }

    /// Argmax of the mean probabilities, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        argmax(self.mean_probs.iter().copied())
    }

    /// Largest mean probability.
    pub fn confidence(&self) -> f64 {
        self.mean_probs[self.predicted_class()]
    }

    /// `z * sqrt(S^2_j / B)` for class `j`.
    pub fn ci_half_width(&self, class: usize, z_alpha: f64) -> f64 {
        z_alpha * (self.per_class_variance[class] / self.num_members() as f64).sqrt()
    }
}

/// Index of the first maximum.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CIConfig {
    pub alpha: f64,
    pub z_alpha: f64,
}

impl CIConfig {
    /// `z_alpha` is the `1 - alpha/2` quantile of the standard normal.
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
        }
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        Ok(Self {
            alpha,
            z_alpha: normal.inverse_cdf(1.0 - alpha / 2.0),
        })
    }
}

impl Default for CIConfig {
    fn default() -> Self {
        Self::new(0.05).expect("valid alpha")
    }
}

/// Closed per-class intervals `mean_j +- z * sqrt(S^2_j / B)`. They may leave
/// `[0, 1]`.
pub fn ci_bounds(pred: &EnsemblePrediction, cfg: &CIConfig) -> Vec<(f64, f64)> {
    (0..pred.num_classes())
        .map(|j| {
            let h = pred.ci_half_width(j, cfg.z_alpha);
            (pred.mean_probs[j] - h, pred.mean_probs[j] + h)
        })
        .collect()
}

/// Anything that turns frames into [`EnsemblePrediction`]s.
pub trait Predictor<F: Real>: Sync {
    fn num_classes(&self) -> usize;
    fn input_rows(&self) -> usize;

    /// Predictions for a `[batch, len*2]` matrix.
    fn predict_rows(&self, inputs: ArrayView2<'_, F>) -> Result<Vec<EnsemblePrediction>>;
}

fn member_rows<F: Real>(model: &ModelParams<F>, inputs: ArrayView2<'_, F>) -> Result<Array2<f64>> {
    Ok(nncore::forward_batch(model, inputs, Mode::Eval)?.mapv(|x| x.to_f64()))
}

impl<F: Real> Predictor<F> for EnsembleModel<F> {
    fn num_classes(&self) -> usize {
        self.members[0].num_classes()
    }

    fn input_rows(&self) -> usize {
        self.members[0].input_rows()
    }

    fn predict_rows(&self, inputs: ArrayView2<'_, F>) -> Result<Vec<EnsemblePrediction>> {
        let per_member = self
            .members
            .iter()
            .map(|m| member_rows(m, inputs))
            .collect::<Result<Vec<_>>>()?;
        (0..inputs.nrows())
            .map(|i| {
                let rows: Vec<_> = per_member.iter().map(|p| p.row(i)).collect();
                let stacked = ndarray::stack(Axis(0), &rows).expect("equal widths");
                EnsemblePrediction::from_members(stacked, &self.weights)
            })
            .collect()
    }
}

impl<F: Real> Predictor<F> for ModelParams<F> {
    fn num_classes(&self) -> usize {
        ModelParams::num_classes(self)
    }

    fn input_rows(&self) -> usize {
        ModelParams::input_rows(self)
    }

    fn predict_rows(&self, inputs: ArrayView2<'_, F>) -> Result<Vec<EnsemblePrediction>> {
        let probs = member_rows(self, inputs)?;
        probs
            .rows()
            .into_iter()
            .map(|row| EnsemblePrediction::from_members(row.insert_axis(Axis(0)).to_owned(), &[1.0]))
            .collect()
    }
}

fn frame_input<F: Real>(frame: ArrayView2<'_, F>, rows: usize) -> Result<Array2<F>> {
    if frame.dim() != (rows, 2) {
        return Err(Error::shape(format!("{rows}x2"), format!("{:?}", frame.dim())));
    }
    let flat: Vec<F> = frame.iter().copied().collect();
    Ok(Array2::from_shape_vec((1, rows * 2), flat).expect("one row"))
}

/// Aggregated prediction of the ensemble for one `len x 2` frame.
pub fn predict<F: Real>(ens: &EnsembleModel<F>, frame: ArrayView2<'_, F>) -> Result<EnsemblePrediction> {
    let x = frame_input(frame, ens.input_rows())?;
    Ok(ens.predict_rows(x.view())?.remove(0))
}

/// A standalone classifier wrapped as a one-member prediction.
pub fn predict_single<F: Real>(model: &ModelParams<F>, frame: ArrayView2<'_, F>) -> Result<EnsemblePrediction> {
    let x = frame_input(frame, model.input_rows())?;
    Ok(model.predict_rows(x.view())?.remove(0))
}

/// Predictions for every frame of a dataset, in dataset order.
pub fn predict_dataset<F: Real, P: Predictor<F> + ?Sized>(
    system: &P,
    data: &SignalDataset,
) -> Result<Vec<EnsemblePrediction>> {
    predict_matrix(system, nncore_design(data).view())
}

pub(crate) fn predict_matrix<F: Real, P: Predictor<F> + ?Sized>(
    system: &P,
    x: ArrayView2<'_, F>,
) -> Result<Vec<EnsemblePrediction>> {
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        out.extend(system.predict_rows(x.slice(ndarray::s![start..end, ..]))?);
    }
    Ok(out)
}

fn nncore_design<F: Real>(data: &SignalDataset) -> Array2<F> {
    crate::nncore::design_matrix(data)
}

/// Seeds used for member `b`: `(init_seed, shuffle_seed)`.
pub fn member_seeds(master_seed: u64, b: usize) -> (u64, u64) {
    (
        seed::derive(master_seed, &[b as u64, 0]),
        seed::derive(master_seed, &[b as u64, 1]),
    )
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn train_member<F: Real>(
    data: &SignalDataset,
    specs: &[LayerSpec],
    cfg: &TrainConfig,
    master_seed: u64,
    b: usize,
) -> Result<ModelParams<F>> {
    let (init_seed, shuffle_seed) = member_seeds(master_seed, b);
    let model = ModelParams::init(specs.to_vec(), data.frame_len, init_seed)?;
    let cfg = TrainConfig {
        shuffle_seed,
        ..cfg.clone()
    };
    match nncore::train(model, data, &cfg) {
        Ok(t) => Ok(t.model),
        Err(Error::Divergence { epoch, .. }) => Err(Error::Divergence { epoch, member: Some(b) }),
        Err(e) => Err(e),
    }
}

/// Trains `members` classifiers on the same data, member `b` initialized and
/// shuffled from seeds derived from `(master_seed, b)`. Up to `workers`
/// members train concurrently; the result does not depend on `workers`.
pub fn train_ensemble<F: Real>(
    train_set: &SignalDataset,
    specs: &[LayerSpec],
    members: usize,
    cfg: &TrainConfig,
    master_seed: u64,
    workers: usize,
) -> Result<EnsembleModel<F>> {
    if members == 0 {
        return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
    }
    let trained = pool(workers)?.install(|| {
        (0..members)
            .into_par_iter()
            .map(|b| train_member::<F>(train_set, specs, cfg, master_seed, b))
            .collect::<Result<Vec<_>>>()
    })?;
    EnsembleModel::equal(trained)
}

/// Splits the sorted SNR grid into `bands` contiguous groups whose sizes
/// differ by at most one.
pub fn snr_bands(snr_values: &[f64], bands: usize) -> Result<Vec<Vec<f64>>> {
    let mut grid = snr_values.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if bands == 0 || grid.len() < bands {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} SNR values into {bands} bands",
            grid.len()
        )));
    }
    let (base, extra) = (grid.len() / bands, grid.len() % bands);
    let mut out = Vec::with_capacity(bands);
    let mut start = 0;
    for b in 0..bands {
        let size = base + usize::from(b < extra);
        out.push(grid[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// SNR-aware weighted ensemble: member `b` trains only on the `b`-th SNR
/// band of `train_set`, then weights come from [`entropy_weights`] on
/// `calibration_set`.
pub fn train_snr_aware<F: Real>(
    train_set: &SignalDataset,
    calibration_set: &SignalDataset,
    specs: &[LayerSpec],
    members: usize,
    cfg: &TrainConfig,
    master_seed: u64,
    workers: usize,
) -> Result<EnsembleModel<F>> {
    let bands = snr_bands(&train_set.snr_values(), members)?;
    let subsets: Vec<SignalDataset> = bands
        .iter()
        .map(|band| train_set.filter(|f| band.contains(&f.snr_db)))
        .collect();
    let trained = pool(workers)?.install(|| {
        subsets
            .par_iter()
            .enumerate()
            .map(|(b, subset)| train_member::<F>(subset, specs, cfg, master_seed, b))
            .collect::<Result<Vec<_>>>()
    })?;
    let weights = entropy_weights(&trained, calibration_set)?;
    EnsembleModel::weighted(trained, weights)
}

/// Deficits `ln C - H` under this are treated as zero.
const ENTROPY_TOLERANCE: f64 = 1e-12;

/// Shannon entropy `-sum p ln p` with `0 ln 0 = 0`.
pub fn shannon_entropy(p: impl IntoIterator<Item = f64>) -> f64 {
    -p.into_iter()
        .filter(|&v| v > 0.0)
        .map(|v| v * v.max(PROB_CLIP_MIN).ln())
        .sum::<f64>()
}

/// Member weights from mean predictive entropy on a calibration set:
/// `w_b` proportional to `ln C - mean_entropy_b`, renormalized. Members that
/// are maximally uncertain everywhere get zero weight; when every member is,
/// the weights fall back to uniform.
pub fn entropy_weights<F: Real>(members: &[ModelParams<F>], calibration_set: &SignalDataset) -> Result<Vec<f64>> {
    if calibration_set.is_empty() {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    if members.is_empty() {
        return Err(Error::InvalidArgument("no members to weight".into()));
    }
    let x = nncore_design::<F>(calibration_set);
    let max_entropy = (members[0].num_classes() as f64).ln();
    let mut deficits = Vec::with_capacity(members.len());
    for m in members {
        let mut total = 0.0;
        for start in (0..x.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(x.nrows());
            let probs = member_rows(m, x.slice(ndarray::s![start..end, ..]))?;
            total += probs
                .rows()
                .into_iter()
                .map(|r| shannon_entropy(r.iter().copied()))
                .sum::<f64>();
        }
        let deficit = max_entropy - total / x.nrows() as f64;
        deficits.push(if deficit < ENTROPY_TOLERANCE { 0.0 } else { deficit });
    }
    let sum: f64 = deficits.iter().sum();
    if sum <= 0.0 {
        return Ok(vec![1.0 / members.len() as f64; members.len()]);
    }
    Ok(deficits.into_iter().map(|d| d / sum).collect())
}
