//! FGSM perturbations at a controlled perturbation-to-noise ratio.
//!
//! `r' = r + eps * sign(grad_r loss(r, y))` with the true label `y` and
//! `sign(0) = 0`, so `||delta||_inf <= eps` holds exactly. The PNR of a set
//! of perturbations is `10 log10(E||delta||^2 / E||r||^2) + SNR` in dB.
//!
//! Perturbations are always crafted on one surrogate classifier and then
//! scored against the attacked system, which may be a whole ensemble.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{AttackRecord, OneHotLabel, SignalDataset};
use crate::ensemble::{predict_matrix, EnsembleModel, Predictor};
use crate::error::{Error, Result};
use crate::nncore::{self, design_matrix, ModelParams, Real};
use crate::siggen::IQFrame;
use crate::uqmetrics::{report_by_snr, MetricsReport, ReportConfig, ScoredBatch};

/// Frames per input-gradient call.
const GRAD_CHUNK: usize = 256;

/// Whose gradient drives the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    Member(usize),
    Standalone,
}

impl std::fmt::Display for Surrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Surrogate::Member(b) => write!(f, "member_{b}"),
            Surrogate::Standalone => f.write_str("standalone"),
        }
    }
}

/// How large the perturbation is: a fixed `l_inf` bound, or the bound that
/// reaches a target PNR at each SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Epsilon(f64),
    TargetPnrDb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub strength: Strength,
    pub surrogate: Surrogate,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        match self.strength {
            Strength::Epsilon(e) if !(e >= 0.0 && e.is_finite()) => {
                Err(Error::InvalidArgument(format!("epsilon {e} must be finite and >= 0")))
            }
            Strength::TargetPnrDb(p) if p.is_nan() || p == f64::INFINITY => {
                Err(Error::InvalidArgument(format!("target PNR {p} dB")))
            }
            _ => Ok(()),
        }
    }

    pub fn record(&self) -> AttackRecord {
        let (epsilon, target_pnr_db) = match self.strength {
            Strength::Epsilon(e) => (Some(e), None),
            Strength::TargetPnrDb(p) => (None, Some(p)),
        };
        AttackRecord {
            method: "fgsm".into(),
            epsilon,
            target_pnr_db,
            surrogate: self.surrogate.to_string(),
            label_source: "true".into(),
        }
    }

    /// The surrogate model out of an ensemble or the standalone classifier.
    pub fn surrogate_model<'a, F: Real>(
        &self,
        ensemble: Option<&'a EnsembleModel<F>>,
        standalone: Option<&'a ModelParams<F>>,
    ) -> Result<&'a ModelParams<F>> {
        match self.surrogate {
            Surrogate::Member(b) => ensemble
                .and_then(|e| e.members().get(b))
                .ok_or_else(|| Error::InvalidArgument(format!("no ensemble member {b} to attack with"))),
            Surrogate::Standalone => {
                standalone.ok_or_else(|| Error::InvalidArgument("no standalone model to attack with".into()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedFrame {
    pub original: IQFrame,
    pub delta: Array2<f64>,
    pub realized_pnr_db: f64,
}

impl PerturbedFrame {
    pub fn perturbed(&self) -> Array2<f64> {
        self.original.samples_f64() + &self.delta
    }
}

fn signed<F: Real>(g: F, epsilon: f64) -> f64 {
    if g > F::zero() {
        epsilon
    } else if g < F::zero() {
        -epsilon
    } else {
        0.0
    }
}

/// FGSM on one frame against `label`.
pub fn fgsm<F: Real>(
    model: &ModelParams<F>,
    frame: &IQFrame,
    label: &OneHotLabel,
    epsilon: f64,
) -> Result<PerturbedFrame> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must be finite and >= 0"
        )));
    }
    let x = frame.samples.mapv(|v| F::of(f64::from(v)));
    let g = nncore::input_gradient(model, x.view(), label)?;
    let delta = g.mapv(|v| signed(v, epsilon));
    let realized_pnr_db = pnr_db(std::slice::from_ref(&delta), std::slice::from_ref(frame), frame.snr_db)?;
    Ok(PerturbedFrame {
        original: frame.clone(),
        delta,
        realized_pnr_db,
    })
}

/// `10 log10(mean ||delta||^2 / mean ||r||^2) + snr_db`; `-inf` when every
/// delta is zero.
pub fn pnr_db(deltas: &[Array2<f64>], frames: &[IQFrame], snr_db: f64) -> Result<f64> {
    if deltas.is_empty() || frames.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if deltas.len() != frames.len() {
        return Err(Error::LengthMismatch(format!(
            "{} deltas for {} frames",
            deltas.len(),
            frames.len()
        )));
    }
    let n = deltas.len() as f64;
    let dp = deltas.iter().map(|d| d.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n;
    let sp = frames.iter().map(IQFrame::energy).sum::<f64>() / n;
    if dp == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (dp / sp).log10() + snr_db)
}

/// The `eps` for which a full-support sign pattern (`||delta||^2 = 2 len eps^2`)
/// lands at `target_pnr_db`. A target of `-inf` gives 0.
pub fn epsilon_for_pnr(target_pnr_db: f64, snr_db: f64, frames: &[IQFrame]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if target_pnr_db == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if !target_pnr_db.is_finite() || !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target {target_pnr_db} dB at SNR {snr_db} dB"
        )));
    }
    let len = frames[0].len();
    if frames.iter().any(|f| f.len() != len) {
        return Err(Error::LengthMismatch("frames of differing length".into()));
    }
    let power = frames.iter().map(IQFrame::energy).sum::<f64>() / frames.len() as f64;
    if power.is_nan() || power <= 0.0 {
        return Err(Error::InvalidArgument(format!("frame power {power} is not positive")));
    }
    let ratio = 10f64.powf((target_pnr_db - snr_db) / 10.0);
    Ok((ratio * power / (2 * len) as f64).sqrt())
}

/// Epsilon and measured PNR used for one SNR slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackPoint {
    pub snr_db: f64,
    pub epsilon: f64,
    pub realized_pnr_db: f64,
}

/// Perturbations for a whole dataset, in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackedSet {
    pub deltas: Vec<Array2<f64>>,
    pub points: Vec<AttackPoint>,
}

/// FGSM on every frame of `data`, with epsilon chosen per SNR slice.
pub fn craft<F: Real>(surrogate: &ModelParams<F>, data: &SignalDataset, strength: Strength) -> Result<AttackedSet> {
    AttackConfig {
        strength,
        surrogate: Surrogate::Standalone,
    }
    .validate()?;
    let len = data.frame_len;
    let mut deltas = vec![Array2::<f64>::zeros((len, 2)); data.len()];
    let mut points = Vec::new();
    for snr in data.snr_values() {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| data.frames[i].snr_db == snr).collect();
        let frames: Vec<IQFrame> = idx.iter().map(|&i| data.frames[i].clone()).collect();
        let epsilon = match strength {
            Strength::Epsilon(e) => e,
            Strength::TargetPnrDb(p) => epsilon_for_pnr(p, snr, &frames)?,
        };
        if epsilon > 0.0 {
            for chunk in idx.chunks(GRAD_CHUNK) {
                let mut x = Array2::<F>::zeros((chunk.len(), len * 2));
                for (mut row, &i) in x.rows_mut().into_iter().zip(chunk) {
                    for (dst, &src) in row.iter_mut().zip(data.frames[i].samples.iter()) {
                        *dst = F::of(f64::from(src));
                    }
                }
                let classes: Vec<usize> = chunk.iter().map(|&i| data.frames[i].scheme_index).collect();
                let g = nncore::input_gradient_batch(surrogate, x.view(), &classes)?;
                for (row, &i) in g.rows().into_iter().zip(chunk) {
                    let d = row.mapv(|v| signed(v, epsilon));
                    deltas[i] = d.into_shape_with_order((len, 2)).expect("len x 2");
                }
            }
        }
        let own: Vec<Array2<f64>> = idx.iter().map(|&i| deltas[i].clone()).collect();
        points.push(AttackPoint {
            snr_db: snr,
            epsilon,
            realized_pnr_db: pnr_db(&own, &frames, snr)?,
        });
    }
    Ok(AttackedSet { deltas, points })
}

fn perturbed_matrix<F: Real>(data: &SignalDataset, deltas: &[Array2<f64>]) -> Array2<F> {
    let mut x = design_matrix::<F>(data);
    for (mut row, (f, d)) in x.rows_mut().into_iter().zip(data.frames.iter().zip(deltas)) {
        for ((dst, &r), &e) in row.iter_mut().zip(f.samples.iter()).zip(d.iter()) {
            *dst = F::of(f64::from(r) + e);
        }
    }
    x
}

/// Scores `system` per SNR on `data` after adding `attacked.deltas`.
pub fn score_attacked<F: Real, P: Predictor<F> + ?Sized>(
    system: &P,
    data: &SignalDataset,
    attacked: &AttackedSet,
    cfg: &ReportConfig,
    system_name: &str,
) -> Result<Vec<MetricsReport>> {
    if attacked.deltas.len() != data.len() {
        return Err(Error::LengthMismatch(format!(
            "{} deltas for {} frames",
            attacked.deltas.len(),
            data.len()
        )));
    }
    let x = perturbed_matrix::<F>(data, &attacked.deltas);
    let preds = predict_matrix(system, x.view())?;
    report_by_snr(&ScoredBatch::from_dataset(preds, data)?, cfg, system_name)
}

/// Clean per-SNR reports; the reference an attack at `eps = 0` reproduces.
pub fn score_clean<F: Real, P: Predictor<F> + ?Sized>(
    system: &P,
    data: &SignalDataset,
    cfg: &ReportConfig,
    system_name: &str,
) -> Result<Vec<MetricsReport>> {
    let x = design_matrix::<F>(data);
    let preds = predict_matrix(system, x.view())?;
    report_by_snr(&ScoredBatch::from_dataset(preds, data)?, cfg, system_name)
}

/// Crafts FGSM perturbations on `surrogate` and scores `system` on them.
pub fn evaluate_under_attack<F: Real, P: Predictor<F> + ?Sized>(
    system: &P,
    surrogate: &ModelParams<F>,
    test_set: &SignalDataset,
    strength: Strength,
    cfg: &ReportConfig,
    system_name: &str,
) -> Result<(Vec<MetricsReport>, Vec<AttackPoint>)> {
    let attacked = craft(surrogate, test_set, strength)?;
    let reports = score_attacked(system, test_set, &attacked, cfg, system_name)?;
    Ok((reports, attacked.points))
}

/// The perturbed frames as a dataset (samples rounded to f32) tagged with
/// the attack parameters.
pub fn perturbed_dataset(data: &SignalDataset, attacked: &AttackedSet, record: AttackRecord) -> Result<SignalDataset> {
    if attacked.deltas.len() != data.len() {
        return Err(Error::LengthMismatch("delta count differs from frame count".into()));
    }
    let mut frames = data.frames.clone();
    for (f, d) in frames.iter_mut().zip(&attacked.deltas) {
        f.samples = (f.samples_f64() + d).mapv(|v| v as f32);
    }
    let mut out = SignalDataset::new(frames, data.class_names.clone(), data.frame_len)?;
    out.provenance = data.provenance.clone();
    out.provenance.attack = Some(record);
    Ok(out)
}

/// `max |delta|` over a set of perturbations.
pub fn linf(deltas: &[Array2<f64>]) -> f64 {
    deltas.iter().flat_map(|d| d.iter()).fold(0.0, |m, &v| m.max(v.abs()))
}
