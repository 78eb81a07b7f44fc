//! Labeled frame collections, stratified splitting and the `.sigset` format.
//!
//! A `.sigset` file is laid out as
//!
//! ```text
//! b"SIGSET\n"            7-byte magic
//! u64 (little endian)    manifest length in bytes
//! manifest               UTF-8 JSON, see `Manifest`
//! payload                f32 little endian, frame-major, row-major (len x 2)
//! ```
//!
//! The manifest carries the schema version, class count and names, frame
//! length, frame count, provenance (generator seed, fading, attack
//! parameters) and one record per frame with its label, SNR tag, cell
//! position, seed and byte offset into the payload.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::seed;
use crate::siggen::{Fading, IQFrame};

pub const SIGSET_MAGIC: &[u8] = b"SIGSET\n";
pub const SIGSET_VERSION: u32 = 1;

/// Parameters of the FGSM attack that produced a perturbed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub method: String,
    pub epsilon: Option<f64>,
    pub target_pnr_db: Option<f64>,
    pub surrogate: String,
    /// Which labels drove the loss gradient ("true" for ground truth).
    pub label_source: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub fading: Option<Fading>,
    pub attack: Option<AttackRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalDataset {
    pub frames: Vec<IQFrame>,
    pub class_names: Vec<String>,
    pub frame_len: usize,
    pub provenance: Provenance,
}

impl SignalDataset {
    pub fn new(frames: Vec<IQFrame>, class_names: Vec<String>, frame_len: usize) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.samples.dim() != (frame_len, 2) {
                return Err(Error::shape(
                    format!("{frame_len}x2"),
                    format!("frame {i}: {:?}", f.samples.dim()),
                ));
            }
            if f.scheme_index >= class_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "frame {i} has label {} but only {} classes",
                    f.scheme_index,
                    class_names.len()
                )));
            }
            if f.samples.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("frame {i} has non-finite samples")));
            }
        }
        Ok(Self {
            frames,
            class_names,
            frame_len,
            provenance: Provenance::default(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Distinct SNR tags in ascending order.
    pub fn snr_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.frames.iter().map(|f| f.snr_db).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// A dataset with the same classes holding only the frames that pass `keep`.
    pub fn filter(&self, keep: impl Fn(&IQFrame) -> bool) -> SignalDataset {
        SignalDataset {
            frames: self.frames.iter().filter(|f| keep(f)).cloned().collect(),
            class_names: self.class_names.clone(),
            frame_len: self.frame_len,
            provenance: self.provenance.clone(),
        }
    }

    pub fn label(&self, i: usize) -> OneHotLabel {
        OneHotLabel::new(self.frames[i].scheme_index, self.num_classes()).expect("dataset labels are validated")
    }

    /// Frame indices grouped by (scheme, SNR) cell, in dataset order.
    fn cells(&self) -> BTreeMap<(usize, u64), Vec<usize>> {
        let mut cells: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
        for (i, f) in self.frames.iter().enumerate() {
            cells.entry((f.scheme_index, f.snr_db.to_bits())).or_default().push(i);
        }
        cells
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let frame_bytes = self.frame_len * 2 * 4;
        let manifest = Manifest {
            format: "sigset".into(),
            version: SIGSET_VERSION,
            num_classes: self.num_classes(),
            frame_len: self.frame_len,
            class_names: self.class_names.clone(),
            frame_count: self.frames.len(),
            provenance: self.provenance.clone(),
            frames: self
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| FrameRecord {
                    scheme_index: f.scheme_index,
                    snr_db: f.snr_db,
                    cell_index: f.cell_index,
                    seed: f.seed,
                    offset: i * frame_bytes,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&manifest)?;
        let mut payload = Vec::with_capacity(self.frames.len() * frame_bytes);
        for f in &self.frames {
            for &x in f.samples.iter() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        container::write(path, SIGSET_MAGIC, &header, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&container::read(path.as_ref())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::split(bytes, SIGSET_MAGIC)?;
        let value: serde_json::Value =
            serde_json::from_slice(header).map_err(|e| Error::CorruptHeader(format!("manifest is not JSON: {e}")))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptHeader("manifest has no version".into()))?;
        if version != u64::from(SIGSET_VERSION) {
            return Err(Error::VersionMismatch {
                found: version as u32,
                expected: SIGSET_VERSION,
            });
        }
        let m: Manifest =
            serde_json::from_value(value).map_err(|e| Error::CorruptHeader(format!("malformed manifest: {e}")))?;
        if m.format != "sigset" {
            return Err(Error::CorruptHeader(format!("unexpected format tag {:?}", m.format)));
        }
        if m.class_names.len() != m.num_classes {
            return Err(Error::CorruptHeader(format!(
                "{} class names for {} classes",
                m.class_names.len(),
                m.num_classes
            )));
        }
        if m.frames.len() != m.frame_count {
            return Err(Error::CorruptHeader(format!(
                "{} frame records for frame count {}",
                m.frames.len(),
                m.frame_count
            )));
        }
        let frame_bytes = m.frame_len * 2 * 4;
        for (i, r) in m.frames.iter().enumerate() {
            if r.scheme_index >= m.num_classes {
                return Err(Error::CorruptHeader(format!(
                    "frame {i} label {} outside {} classes",
                    r.scheme_index, m.num_classes
                )));
            }
            if r.offset != i * frame_bytes {
                return Err(Error::CorruptHeader(format!("frame {i} has offset {}", r.offset)));
            }
        }
        let expected = m.frame_count * frame_bytes;
        if payload.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::CorruptHeader(format!(
                "{} trailing payload bytes",
                payload.len() - expected
            )));
        }
        let frames = m
            .frames
            .iter()
            .map(|r| {
                let chunk = &payload[r.offset..r.offset + frame_bytes];
                let values: Vec<f32> = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                IQFrame {
                    samples: Array2::from_shape_vec((m.frame_len, 2), values).expect("chunk sized from frame_len"),
                    scheme_index: r.scheme_index,
                    snr_db: r.snr_db,
                    cell_index: r.cell_index,
                    seed: r.seed,
                }
            })
            .collect();
        let mut ds =
            SignalDataset::new(frames, m.class_names, m.frame_len).map_err(|e| Error::CorruptHeader(e.to_string()))?;
        ds.provenance = m.provenance;
        Ok(ds)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    num_classes: usize,
    frame_len: usize,
    class_names: Vec<String>,
    frame_count: usize,
    provenance: Provenance,
    frames: Vec<FrameRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRecord {
    scheme_index: usize,
    snr_db: f64,
    cell_index: usize,
    seed: u64,
    offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OneHotLabel {
    class: usize,
    num_classes: usize,
}

impl OneHotLabel {
    pub fn new(class: usize, num_classes: usize) -> Result<Self> {
        if class >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {class} outside {num_classes} classes"
            )));
        }
        Ok(Self { class, num_classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vector(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.num_classes, |j| if j == self.class { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: SignalDataset,
    pub test: SignalDataset,
}

/// Stratified split: inside every (scheme, SNR) cell, `round(n * test_fraction)`
/// frames (clamped to `1..n`) go to the test set. Frame order inside each
/// half follows the original dataset.
pub fn split(ds: &SignalDataset, test_fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut is_test = vec![false; ds.frames.len()];
    for (&(scheme, snr_bits), members) in &ds.cells() {
        let n = members.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "cell (class {scheme}, {} dB) has {n} frame(s); need at least 2",
                f64::from_bits(snr_bits)
            )));
        }
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let mut order = members.clone();
        let mut rng = seed::rng(seed::derive(seed, &[scheme as u64, snr_bits]));
        order.shuffle(&mut rng);
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
    }
    let pick = |want_test: bool| SignalDataset {
        frames: ds
            .frames
            .iter()
            .zip(&is_test)
            .filter(|(_, &t)| t == want_test)
            .map(|(f, _)| f.clone())
            .collect(),
        class_names: ds.class_names.clone(),
        frame_len: ds.frame_len,
        provenance: ds.provenance.clone(),
    };
    Ok(SplitDataset {
        train: pick(false),
        test: pick(true),
    })
}

impl SplitDataset {
    /// True when no frame identity appears in both halves.
    pub fn is_disjoint(&self) -> bool {
        let train: HashSet<_> = self.train.frames.iter().map(IQFrame::identity).collect();
        self.test.frames.iter().all(|f| !train.contains(&f.identity()))
    }
}
