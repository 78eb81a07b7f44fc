//! Uncertainty-quantification scores over a batch of aggregated predictions.
//!
//! Every log-based metric clips probabilities to `[PROB_CLIP_MIN, 1]` first,
//! the same clip the network's loss uses, so per-sample KL against a one-hot
//! label and the NLL term are the same floating point number.
//!
//! CSV column order (one row per system and SNR slice):
//!
//! ```text
//! system,snr_db,samples,accuracy,nll,brier,ece,mean_kl,
//! ci_width_correct_mean,ci_width_incorrect_mean,
//! coverage_strict,coverage_relaxed,high_confidence_proportion
//! ```
//!
//! Means over an empty correct or incorrect subset are written as empty
//! fields.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{OneHotLabel, SignalDataset};
use crate::ensemble::{ci_bounds, CIConfig, EnsemblePrediction};
use crate::error::{Error, Result};
use crate::nncore::PROB_CLIP_MIN;

/// Confidence above which a prediction counts as high-confidence.
pub const HIGH_CONFIDENCE: f64 = 0.8;

/// Bins of the CI-width histograms in a report.
pub const WIDTH_HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBatch {
    pub predictions: Vec<EnsemblePrediction>,
    pub labels: Vec<OneHotLabel>,
    pub snr_db: Vec<f64>,
}

impl ScoredBatch {
    pub fn new(predictions: Vec<EnsemblePrediction>, labels: Vec<OneHotLabel>, snr_db: Vec<f64>) -> Result<Self> {
        if predictions.len() != labels.len() || labels.len() != snr_db.len() {
            return Err(Error::LengthMismatch(format!(
                "{} predictions, {} labels, {} SNR tags",
                predictions.len(),
                labels.len(),
                snr_db.len()
            )));
        }
        for (p, y) in predictions.iter().zip(&labels) {
            if p.num_classes() != y.num_classes() {
                return Err(Error::shape(format!("{} classes", y.num_classes()), p.num_classes()));
            }
        }
        Ok(Self {
            predictions,
            labels,
            snr_db,
        })
    }

    /// Pairs predictions with a dataset's labels and SNR tags, in order.
    pub fn from_dataset(predictions: Vec<EnsemblePrediction>, data: &SignalDataset) -> Result<Self> {
        let labels = (0..data.len()).map(|i| data.label(i)).collect();
        let snr = data.frames.iter().map(|f| f.snr_db).collect();
        Self::new(predictions, labels, snr)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sorted distinct SNR tags.
    pub fn snr_values(&self) -> Vec<f64> {
        let mut v = self.snr_db.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Items whose SNR tag equals `snr_db`.
    pub fn at_snr(&self, snr_db: f64) -> ScoredBatch {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.snr_db[i] == snr_db).collect();
        ScoredBatch {
            predictions: keep.iter().map(|&i| self.predictions[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            snr_db: keep.iter().map(|&i| self.snr_db[i]).collect(),
        }
    }

    fn items(&self) -> Result<impl Iterator<Item = (&EnsemblePrediction, &OneHotLabel)>> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(self.predictions.iter().zip(&self.labels))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ECEConfig {
    pub bin_count: usize,
}

impl ECEConfig {
    pub fn new(bin_count: usize) -> Result<Self> {
        if bin_count == 0 {
            return Err(Error::InvalidArgument("ECE needs at least one bin".into()));
        }
        Ok(Self { bin_count })
    }

    /// Bin of a confidence in `[0, 1]`: `[k/K, (k+1)/K)`, last bin closed.
    pub fn bin_of(&self, confidence: f64) -> usize {
        let k = self.bin_count;
        let edge = |i: usize| i as f64 / k as f64;
        let mut b = ((confidence * k as f64).floor().max(0.0) as usize).min(k - 1);
        // the product can round across an edge; settle against the edges themselves
        while b > 0 && confidence < edge(b) {
            b -= 1;
        }
        while b + 1 < k && confidence >= edge(b + 1) {
            b += 1;
        }
        b
    }
}

impl Default for ECEConfig {
    fn default() -> Self {
        Self { bin_count: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    Strict,
    Relaxed,
}

fn clipped_ln(p: f64) -> f64 {
    p.clamp(PROB_CLIP_MIN, 1.0).ln()
}

pub fn accuracy(batch: &ScoredBatch) -> Result<f64> {
    let hits = batch.items()?.filter(|(p, y)| p.predicted_class() == y.class()).count();
    Ok(hits as f64 / batch.len() as f64)
}

/// Mean negative log-probability of the true class.
pub fn nll(batch: &ScoredBatch) -> Result<f64> {
    let total: f64 = batch.items()?.map(|(p, y)| -clipped_ln(p.mean_probs[y.class()])).sum();
    // `+ 0.0` turns the -0.0 of an all-certain batch into 0
    Ok(total / batch.len() as f64 + 0.0)
}

/// Mean over samples of the squared error summed over classes (not divided
/// by `C`).
///
/// Each sample's sum is the correctly rounded value of the exact sum for
/// the stored probabilities, and the mean is taken as an offset from the
/// first sample. Together these make the uniform predictor score exactly
/// `(C - 1) / C` at any batch size.
pub fn brier(batch: &ScoredBatch) -> Result<f64> {
    let per: Vec<f64> = batch
        .items()?
        .map(|(p, y)| squared_error(p.mean_probs.iter().copied(), y.class()))
        .collect();
    let first = per[0];
    let offset = exact_sum(per.iter().map(|v| v - first)) / per.len() as f64;
    Ok(first + offset)
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_product(a: f64, b: f64) -> (f64, f64) {
    let h = a * b;
    (h, a.mul_add(b, -h))
}

/// `sum_j (y_j - q_j)^2` against a one-hot target, with every difference
/// and square split into exact parts before summing.
fn squared_error(probs: impl Iterator<Item = f64>, class: usize) -> f64 {
    let mut terms = Vec::new();
    for (j, q) in probs.enumerate() {
        let (d, e) = two_sum(if j == class { 1.0 } else { 0.0 }, -q);
        for (a, b) in [(d, d), (2.0 * d, e), (e, e)] {
            let (h, l) = two_product(a, b);
            terms.extend([h, l]);
        }
    }
    exact_sum(terms)
}

/// Correctly rounded sum of finite values (Shewchuk's partials with a
/// round-half-even fix-up).
pub(crate) fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for k in 0..partials.len() {
            let mut y = partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Expected calibration error over uniform confidence bins.
pub fn ece(batch: &ScoredBatch, cfg: &ECEConfig) -> Result<f64> {
    let n = batch.len() as f64;
    let mut count = vec![0usize; cfg.bin_count];
    let mut hits = vec![0usize; cfg.bin_count];
    let mut conf = vec![0.0; cfg.bin_count];
    for (p, y) in batch.items()? {
        let c = p.confidence();
        let b = cfg.bin_of(c);
        count[b] += 1;
        conf[b] += c;
        hits[b] += usize::from(p.predicted_class() == y.class());
    }
    Ok((0..cfg.bin_count)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            (m / n) * (hits[b] as f64 / m - conf[b] / m).abs()
        })
        .sum())
}

/// Per-sample `KL(y || p)` and its mean.
pub fn kl_divergence(batch: &ScoredBatch) -> Result<(Vec<f64>, f64)> {
    let per: Vec<f64> = batch
        .items()?
        .map(|(p, y)| {
            y.vector()
                .iter()
                .zip(&p.mean_probs)
                .filter(|(&t, _)| t > 0.0)
                .map(|(&t, &q)| t * (t.ln() - clipped_ln(q)))
                .sum()
        })
        .collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64 + 0.0;
    Ok((per, mean))
}

/// CI widths of the predicted class, split by whether the prediction was
/// right.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CiWidths {
    pub correct: Vec<f64>,
    pub incorrect: Vec<f64>,
}

pub fn ci_widths(batch: &ScoredBatch, cfg: &CIConfig) -> CiWidths {
    let mut out = CiWidths::default();
    for (p, y) in batch.predictions.iter().zip(&batch.labels) {
        let k = p.predicted_class();
        let w = 2.0 * p.ci_half_width(k, cfg.z_alpha);
        if k == y.class() {
            out.correct.push(w);
        } else {
            out.incorrect.push(w);
        }
    }
    out
}

/// Fraction of samples whose closed class intervals contain 1 for the true
/// class (and, in strict mode, 0 for every other class).
pub fn coverage(batch: &ScoredBatch, cfg: &CIConfig, mode: CoverageMode) -> Result<f64> {
    let covered = batch
        .items()?
        .filter(|(p, y)| {
            let bounds = ci_bounds(p, cfg);
            bounds.iter().enumerate().all(|(j, &(lo, hi))| {
                if j == y.class() {
                    lo <= 1.0 && 1.0 <= hi
                } else {
                    mode == CoverageMode::Relaxed || (lo <= 0.0 && 0.0 <= hi)
                }
            })
        })
        .count();
    Ok(covered as f64 / batch.len() as f64)
}

/// Fraction of samples whose top mean probability exceeds 0.8.
pub fn high_confidence_proportion(batch: &ScoredBatch) -> Result<f64> {
    let n = batch.items()?.filter(|(p, _)| p.confidence() > HIGH_CONFIDENCE).count();
    Ok(n as f64 / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthHistogram {
    /// `bins + 1` edges, uniform over the observed width range.
    pub edges: Vec<f64>,
    pub correct: Vec<usize>,
    pub incorrect: Vec<usize>,
}

impl WidthHistogram {
    pub fn new(widths: &CiWidths, bins: usize) -> Self {
        let all = widths.correct.iter().chain(&widths.incorrect);
        let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
        let step = (hi - lo) / bins as f64;
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + step * i as f64 })
            .collect();
        let bin = |w: f64| {
            if step > 0.0 {
                (((w - lo) / step) as usize).min(bins - 1)
            } else {
                0
            }
        };
        let mut correct = vec![0; bins];
        let mut incorrect = vec![0; bins];
        widths.correct.iter().for_each(|&w| correct[bin(w)] += 1);
        widths.incorrect.iter().for_each(|&w| incorrect[bin(w)] += 1);
        Self {
            edges,
            correct,
            incorrect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportConfig {
    pub ci: CIConfig,
    pub ece: ECEConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system: String,
    /// `None` for a report over mixed SNRs.
    pub snr_db: Option<f64>,
    pub samples: usize,
    pub accuracy: f64,
    pub nll: f64,
    pub brier: f64,
    pub ece: f64,
    pub mean_kl: f64,
    pub ci_width_correct_mean: Option<f64>,
    pub ci_width_incorrect_mean: Option<f64>,
    pub coverage_strict: f64,
    pub coverage_relaxed: f64,
    pub high_confidence_proportion: f64,
    pub ci_width_histogram: WidthHistogram,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// All metrics on one batch.
pub fn report(batch: &ScoredBatch, cfg: &ReportConfig, system: &str, snr_db: Option<f64>) -> Result<MetricsReport> {
    let widths = ci_widths(batch, &cfg.ci);
    Ok(MetricsReport {
        system: system.to_string(),
        snr_db,
        samples: batch.len(),
        accuracy: accuracy(batch)?,
        nll: nll(batch)?,
        brier: brier(batch)?,
        ece: ece(batch, &cfg.ece)?,
        mean_kl: kl_divergence(batch)?.1,
        ci_width_correct_mean: mean(&widths.correct),
        ci_width_incorrect_mean: mean(&widths.incorrect),
        coverage_strict: coverage(batch, &cfg.ci, CoverageMode::Strict)?,
        coverage_relaxed: coverage(batch, &cfg.ci, CoverageMode::Relaxed)?,
        high_confidence_proportion: high_confidence_proportion(batch)?,
        ci_width_histogram: WidthHistogram::new(&widths, WIDTH_HISTOGRAM_BINS),
    })
}

/// One report per SNR tag, ascending.
pub fn report_by_snr(batch: &ScoredBatch, cfg: &ReportConfig, system: &str) -> Result<Vec<MetricsReport>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch
        .snr_values()
        .into_iter()
        .map(|s| report(&batch.at_snr(s), cfg, system, Some(s)))
        .collect()
}

pub const CSV_HEADER: &str = "system,snr_db,samples,accuracy,nll,brier,ece,mean_kl,\
ci_width_correct_mean,ci_width_incorrect_mean,coverage_strict,coverage_relaxed,\
high_confidence_proportion";

pub(crate) fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row (no newline) in `CSV_HEADER` order.
pub fn csv_row(r: &MetricsReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.system,
        field(r.snr_db),
        r.samples,
        r.accuracy,
        r.nll,
        r.brier,
        r.ece,
        r.mean_kl,
        field(r.ci_width_correct_mean),
        field(r.ci_width_incorrect_mean),
        r.coverage_strict,
        r.coverage_relaxed,
        r.high_confidence_proportion
    )
}

pub fn write_csv(reports: &[MetricsReport], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

pub fn csv_string(reports: &[MetricsReport]) -> String {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}
