//! Baseband IQ frame synthesis.
//!
//! A frame is produced by drawing uniform random bits, mapping them onto a
//! unit-energy constellation (one symbol per sample, no pulse shaping) and
//! passing the symbols through `r = sqrt(rho) * H * s + n`, where `H` is
//! diagonal and `n` is circular complex Gaussian noise with unit total
//! variance per sample.
//!
//! # Bit mappings
//!
//! Bits are consumed most-significant first within each symbol group.
//!
//! | scheme | mapping |
//! |--------|---------|
//! | OOK    | `0 -> 0`, `1 -> sqrt(2)` |
//! | BPSK   | `0 -> +1`, `1 -> -1` |
//! | QPSK   | `00 -> (+1+1j)/sqrt2`, `01 -> (+1-1j)/sqrt2`, `10 -> (-1+1j)/sqrt2`, `11 -> (-1-1j)/sqrt2` |
//! | 4ASK   | `00 -> +3`, `01 -> +1`, `11 -> -1`, `10 -> -3` (all `/ sqrt5`) |
//! | M-PSK  | value `v` sits at angle `2*pi*k/M` where `k` is the inverse Gray code of `v` |
//! | M-QAM  | first half of the group drives I, second half Q, each axis is a Gray-coded PAM like 4ASK |
//!
//! 8PSK, for instance: `000 -> 0°`, `001 -> 45°`, `011 -> 90°`, `010 -> 135°`,
//! `110 -> 180°`, `111 -> 225°`, `101 -> 270°`, `100 -> 315°`.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::SignalDataset;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationScheme {
    name: String,
    constellation: Vec<Complex64>,
    bits_per_symbol: u32,
}

impl ModulationScheme {
    /// Builds a scheme from an explicit constellation. Point `i` is the
    /// symbol for the bit group whose big-endian value is `i`.
    pub fn new(name: impl Into<String>, constellation: Vec<Complex64>) -> Result<Self> {
        let name = name.into();
        let n = constellation.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "{name}: constellation size {n} is not a power of two >= 2"
            )));
        }
        if constellation.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name}: non-finite point")));
        }
        let energy = constellation.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
        if (energy - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "{name}: mean symbol energy {energy} is not 1"
            )));
        }
        for i in 0..n {
            for j in i + 1..n {
                if constellation[i] == constellation[j] {
                    return Err(Error::InvalidArgument(format!("{name}: points {i} and {j} coincide")));
                }
            }
        }
        Ok(Self {
            name,
            bits_per_symbol: n.trailing_zeros(),
            constellation,
        })
    }

    pub fn ook() -> Self {
        let a = std::f64::consts::SQRT_2;
        Self::new("OOK", vec![Complex64::new(0.0, 0.0), Complex64::new(a, 0.0)]).expect("valid OOK")
    }

    pub fn bpsk() -> Self {
        Self::new(
            "BPSK",
            gray_pam(2).into_iter().map(|a| Complex64::new(a, 0.0)).collect(),
        )
        .expect("valid BPSK")
    }

    pub fn qpsk() -> Self {
        let mut s = Self::qam(4);
        s.name = "QPSK".into();
        s
    }

    /// Gray-coded M-PSK with a point on the positive real axis.
    pub fn psk(order: usize) -> Self {
        let points = (0..order)
            .map(|v| {
                let k = inverse_gray(v);
                Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / order as f64)
            })
            .collect();
        Self::new(format!("{order}PSK"), points).expect("valid PSK")
    }

    /// Gray-coded M-ASK with symmetric levels.
    pub fn ask(order: usize) -> Self {
        let points = gray_pam(order).into_iter().map(|a| Complex64::new(a, 0.0)).collect();
        Self::new(format!("{order}ASK"), points).expect("valid ASK")
    }

    /// Square Gray-coded M-QAM. `order` must be an even power of two.
    pub fn qam(order: usize) -> Self {
        let bits = order.trailing_zeros();
        assert!(
            order.is_power_of_two() && bits.is_multiple_of(2),
            "square QAM needs 4^k points"
        );
        let side = 1usize << (bits / 2);
        let levels = pam_levels(side);
        let energy = 2.0 * levels.iter().map(|a| a * a).sum::<f64>() / side as f64;
        let scale = energy.sqrt();
        let points = (0..order)
            .map(|v| {
                let i = levels[inverse_gray(v >> (bits / 2))];
                let q = levels[inverse_gray(v & (side - 1))];
                Complex64::new(i / scale, q / scale)
            })
            .collect();
        Self::new(format!("{order}QAM"), points).expect("valid QAM")
    }

    /// Looks a scheme up by its canonical name (case-insensitive).
    pub fn by_name(name: &str) -> Result<Self> {
        let upper = name.to_ascii_uppercase();
        Ok(match upper.as_str() {
            "OOK" => Self::ook(),
            "BPSK" => Self::bpsk(),
            "QPSK" => Self::qpsk(),
            "8PSK" => Self::psk(8),
            "16PSK" => Self::psk(16),
            "4ASK" => Self::ask(4),
            "8ASK" => Self::ask(8),
            "16QAM" => Self::qam(16),
            "64QAM" => Self::qam(64),
            "256QAM" => Self::qam(256),
            _ => return Err(Error::InvalidArgument(format!("unknown modulation scheme {name:?}"))),
        })
    }

    /// The eight-class desk-scale set, ordered from easy to crowded.
    pub fn desk_set() -> Vec<Self> {
        ["OOK", "BPSK", "QPSK", "8PSK", "16PSK", "4ASK", "16QAM", "64QAM"]
            .iter()
            .map(|n| Self::by_name(n).expect("builtin scheme"))
            .collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn constellation(&self) -> &[Complex64] {
        &self.constellation
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol as usize
    }
}

fn inverse_gray(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

/// Levels `L-1, L-3, ..., -(L-1)`, unnormalized.
fn pam_levels(order: usize) -> Vec<f64> {
    (0..order).map(|k| (order - 1) as f64 - 2.0 * k as f64).collect()
}

/// Unit-energy Gray-coded PAM indexed by bit value.
fn gray_pam(order: usize) -> Vec<f64> {
    let levels = pam_levels(order);
    let scale = (levels.iter().map(|a| a * a).sum::<f64>() / order as f64).sqrt();
    (0..order).map(|v| levels[inverse_gray(v)] / scale).collect()
}

/// Maps bits (each 0 or 1) onto constellation symbols.
pub fn modulate(bits: &[u8], scheme: &ModulationScheme) -> Result<Vec<Complex64>> {
    let b = scheme.bits_per_symbol();
    if !bits.len().is_multiple_of(b) {
        return Err(Error::LengthMismatch(format!(
            "{} bits is not a multiple of {} bits per symbol for {}",
            bits.len(),
            b,
            scheme.name
        )));
    }
    if let Some(bad) = bits.iter().find(|&&x| x > 1) {
        return Err(Error::InvalidArgument(format!("bit value {bad} is not 0 or 1")));
    }
    Ok(bits
        .chunks(b)
        .map(|group| {
            let v = group.iter().fold(0usize, |acc, &bit| (acc << 1) | bit as usize);
            scheme.constellation[v]
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    #[default]
    Identity,
    /// Independent unit-mean-power complex Gaussian gain per sample.
    RayleighIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub fading: Fading,
    pub seed: u64,
}

/// Linear SNR `rho = 10^(snr_db/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Passes `s` through `r[k] = sqrt(rho) h[k] s[k] + n[k]`.
pub fn apply_channel(s: &[Complex64], cfg: &ChannelConfig) -> Result<Vec<Complex64>> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("empty symbol sequence".into()));
    }
    if !cfg.snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite SNR {}", cfg.snr_db)));
    }
    if s.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::InvalidArgument("non-finite symbol".into()));
    }
    let amp = db_to_linear(cfg.snr_db).sqrt();
    let sigma = std::f64::consts::FRAC_1_SQRT_2;
    let mut rng = seed::rng(cfg.seed);
    let mut gaussian = move || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * sigma, im * sigma)
    };
    Ok(s.iter()
        .map(|&sym| {
            let h = match cfg.fading {
                Fading::Identity => Complex64::new(1.0, 0.0),
                Fading::RayleighIid => gaussian(),
            };
            amp * h * sym + gaussian()
        })
        .collect())
}

/// Column 0 holds the in-phase parts, column 1 the quadrature parts.
pub fn to_iq_matrix(r: &[Complex64]) -> Array2<f64> {
    Array2::from_shape_fn((r.len(), 2), |(k, c)| if c == 0 { r[k].re } else { r[k].im })
}

pub fn from_iq_matrix(m: ArrayView2<'_, f64>) -> Vec<Complex64> {
    m.outer_iter().map(|row| Complex64::new(row[0], row[1])).collect()
}

/// One received frame with its label metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IQFrame {
    /// `len x 2` samples, I then Q.
    pub samples: Array2<f32>,
    pub scheme_index: usize,
    pub snr_db: f64,
    /// Position of the frame within its (scheme, SNR) cell.
    pub cell_index: usize,
    /// Seed the frame was generated from (0 when not generated here).
    pub seed: u64,
}

impl IQFrame {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    /// Identity used for train/test disjointness.
    pub fn identity(&self) -> (usize, u64, usize) {
        (self.scheme_index, self.snr_db.to_bits(), self.cell_index)
    }

    /// Samples widened to double precision.
    pub fn samples_f64(&self) -> Array2<f64> {
        self.samples.mapv(f64::from)
    }

    /// Squared norm `||r||^2` of the frame.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&x| f64::from(x) * f64::from(x)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub schemes: Vec<ModulationScheme>,
    pub snr_grid: Vec<f64>,
    pub frames_per_cell: usize,
    pub frame_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub fading: Fading,
}

/// Generates a balanced dataset with `frames_per_cell` frames for every
/// (scheme, SNR) pair. Frame `k` of cell `(i, j)` depends only on
/// `(seed, i, j, k)`.
pub fn generate_frames(cfg: &GeneratorConfig) -> Result<SignalDataset> {
    if cfg.schemes.is_empty() {
        return Err(Error::InvalidGrid("no modulation schemes".into()));
    }
    if cfg.snr_grid.is_empty() {
        return Err(Error::InvalidGrid("empty SNR grid".into()));
    }
    if let Some(bad) = cfg.snr_grid.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidGrid(format!("non-finite SNR {bad}")));
    }
    if cfg.frames_per_cell == 0 {
        return Err(Error::InvalidGrid("frames_per_cell must be >= 1".into()));
    }
    if cfg.frame_len == 0 {
        return Err(Error::InvalidGrid("frame length must be >= 1".into()));
    }

    let mut frames = Vec::with_capacity(cfg.schemes.len() * cfg.snr_grid.len() * cfg.frames_per_cell);
    for (si, scheme) in cfg.schemes.iter().enumerate() {
        for (ti, &snr_db) in cfg.snr_grid.iter().enumerate() {
            for k in 0..cfg.frames_per_cell {
                let frame_seed = seed::derive(cfg.seed, &[si as u64, ti as u64, k as u64]);
                let mut bit_rng = seed::rng(seed::derive(frame_seed, &[0]));
                let bits: Vec<u8> = (0..cfg.frame_len * scheme.bits_per_symbol())
                    .map(|_| bit_rng.random_range(0..2u8))
                    .collect();
                let symbols = modulate(&bits, scheme)?;
                let channel = ChannelConfig {
                    snr_db,
                    fading: cfg.fading,
                    seed: seed::derive(frame_seed, &[1]),
                };
                let r = apply_channel(&symbols, &channel)?;
                frames.push(IQFrame {
                    samples: to_iq_matrix(&r).mapv(|x| x as f32),
                    scheme_index: si,
                    snr_db,
                    cell_index: k,
                    seed: frame_seed,
                });
            }
        }
    }
    let class_names = cfg.schemes.iter().map(|s| s.name.clone()).collect();
    let mut ds = SignalDataset::new(frames, class_names, cfg.frame_len)?;
    ds.provenance.seed = Some(cfg.seed);
    ds.provenance.fading = Some(cfg.fading);
    Ok(ds)
}
