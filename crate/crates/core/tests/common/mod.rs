//! Brute-force reference implementations shared by the integration tests.
//! They work on plain nested vectors and do not call the library's metric
//! code.
#![allow(dead_code)]

use amc_uq::dataset::OneHotLabel;
use amc_uq::ensemble::EnsemblePrediction;
use amc_uq::uqmetrics::ScoredBatch;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CLIP: f64 = 1e-12;

pub struct Item {
    pub members: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub label: usize,
}

pub mod criteria;
pub mod gradcheck;

/// Copies an equal-weight batch into plain vectors. The mean is recomputed
/// from the member rows.
pub fn items(batch: &ScoredBatch) -> Vec<Item> {
    batch
        .predictions
        .iter()
        .zip(&batch.labels)
        .map(|(p, y)| {
            let members: Vec<Vec<f64>> = p.member_probs.rows().into_iter().map(|r| r.to_vec()).collect();
            let mut mean = vec![0.0; members[0].len()];
            for row in &members {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let b = members.len() as f64;
            mean.iter_mut().for_each(|m| *m /= b);
            Item {
                members,
                mean,
                label: y.class(),
            }
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..v.len() {
        if v[j] > v[best] {
            best = j;
        }
    }
    best
}

fn clipped(p: f64) -> f64 {
    p.clamp(CLIP, 1.0)
}

pub fn nll(items: &[Item]) -> f64 {
    let mut s = 0.0;
    for it in items {
        for j in 0..it.mean.len() {
            let y = if j == it.label { 1.0 } else { 0.0 };
            s -= y * clipped(it.mean[j]).ln();
        }
    }
    s / items.len() as f64
}

pub fn brier(items: &[Item]) -> f64 {
    let mut s = 0.0;
    for it in items {
        for j in 0..it.mean.len() {
            let y = if j == it.label { 1.0 } else { 0.0 };
            s += (y - it.mean[j]).powi(2);
        }
    }
    s / items.len() as f64
}

pub fn accuracy(items: &[Item]) -> f64 {
    items.iter().filter(|it| argmax(&it.mean) == it.label).count() as f64 / items.len() as f64
}

/// Materializes every bin as an explicit list of member samples.
pub fn ece(items: &[Item], bins: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..bins {
        let lo = k as f64 / bins as f64;
        let hi = (k + 1) as f64 / bins as f64;
        let last = k + 1 == bins;
        let members: Vec<&Item> = items
            .iter()
            .filter(|it| {
                let c = it.mean[argmax(&it.mean)];
                c >= lo && (c < hi || (last && c <= hi))
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let acc = members.iter().filter(|it| argmax(&it.mean) == it.label).count() as f64 / n;
        let conf = members.iter().map(|it| it.mean[argmax(&it.mean)]).sum::<f64>() / n;
        total += n / items.len() as f64 * (acc - conf).abs();
    }
    total
}

pub fn kl(items: &[Item]) -> Vec<f64> {
    items
        .iter()
        .map(|it| {
            let mut s = 0.0;
            for j in 0..it.mean.len() {
                if j == it.label {
                    s += 1.0 * (1.0f64.ln() - clipped(it.mean[j]).ln());
                }
            }
            s
        })
        .collect()
}

/// Two-pass unbiased variance of each class across members.
pub fn variance(members: &[Vec<f64>]) -> Vec<f64> {
    let b = members.len();
    let c = members[0].len();
    (0..c)
        .map(|j| {
            if b < 2 {
                return 0.0;
            }
            let m = members.iter().map(|r| r[j]).sum::<f64>() / b as f64;
            members.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (b - 1) as f64
        })
        .collect()
}

pub fn half_width(members: &[Vec<f64>], class: usize, z: f64) -> f64 {
    z * (variance(members)[class] / members.len() as f64).sqrt()
}

/// `(correct, incorrect)` widths of the predicted class's interval.
pub fn ci_widths(items: &[Item], z: f64) -> (Vec<f64>, Vec<f64>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for it in items {
        let k = argmax(&it.mean);
        let w = 2.0 * half_width(&it.members, k, z);
        if k == it.label {
            ok.push(w)
        } else {
            bad.push(w)
        }
    }
    (ok, bad)
}

pub fn coverage(items: &[Item], z: f64, strict: bool) -> f64 {
    let mut hits = 0;
    for it in items {
        let mut covered = true;
        for j in 0..it.mean.len() {
            let h = half_width(&it.members, j, z);
            let (lo, hi) = (it.mean[j] - h, it.mean[j] + h);
            if j == it.label {
                covered &= lo <= 1.0 && hi >= 1.0;
            } else if strict {
                covered &= lo <= 0.0 && hi >= 0.0;
            }
        }
        hits += usize::from(covered);
    }
    hits as f64 / items.len() as f64
}

pub fn high_confidence(items: &[Item]) -> f64 {
    items.iter().filter(|it| it.mean.iter().any(|&p| p > 0.8)).count() as f64 / items.len() as f64
}

/// Standard normal CDF by composite Simpson quadrature of the density.
pub fn normal_cdf(x: f64) -> f64 {
    let n = 20_000;
    let a = 0.0;
    let h = (x - a) / n as f64;
    let pdf = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(a) + pdf(x);
    for i in 1..n {
        let t = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t);
    }
    0.5 + s * h / 3.0
}

/// Quantile by bisection on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn random_distribution(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    match rng.random_range(0..10) {
        0 => {
            let mut v = vec![0.0; c];
            v[rng.random_range(0..c)] = 1.0;
            v
        }
        1 => vec![1.0 / c as f64; c],
        _ => {
            let scale: f64 = rng.random_range(0.1..8.0);
            let e: Vec<f64> = (0..c).map(|_| (rng.random_range(-1.0..1.0) * scale).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        }
    }
}

/// A random batch of ensemble predictions with `classes` classes and
/// `len` items. Members sometimes agree exactly, sometimes are one-hot.
pub fn random_batch(rng: &mut ChaCha8Rng, classes: usize, len: usize) -> ScoredBatch {
    let b = rng.random_range(1..=6);
    let mut preds = Vec::with_capacity(len);
    let mut labels = Vec::with_capacity(len);
    for _ in 0..len {
        let rows: Vec<Vec<f64>> = if rng.random_bool(0.2) {
            let r = random_distribution(rng, classes);
            vec![r; b]
        } else {
            (0..b).map(|_| random_distribution(rng, classes)).collect()
        };
        let m = Array2::from_shape_fn((b, classes), |(i, j)| rows[i][j]);
        preds.push(EnsemblePrediction::from_members(m, &vec![1.0 / b as f64; b]).unwrap());
        labels.push(OneHotLabel::new(rng.random_range(0..classes), classes).unwrap());
    }
    let snr = (0..len).map(|_| [0.0, 10.0][rng.random_range(0..2)]).collect();
    ScoredBatch::new(preds, labels, snr).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
