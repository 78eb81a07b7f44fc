//! Model weight files.
//!
//! Layout: `b"AMCWTS\n"`, a little-endian `u64` manifest length, a JSON
//! manifest (layer specs, input rows, init seed, precision, tensor table)
//! and the raw little-endian tensors in the stored precision, layer by
//! layer, weight then bias.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::model::{LayerParams, ModelParams};
use super::{Precision, Real};
use crate::container;
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"AMCWTS\n";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    format: String,
    version: u32,
    precision: Precision,
    input_rows: usize,
    init_seed: u64,
    specs: Vec<LayerSpec>,
    tensors: Vec<TensorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    layer: usize,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn parse_manifest(bytes: &[u8]) -> Result<(WeightsManifest, &[u8])> {
    let (header, payload) = container::split(bytes, MAGIC)?;
    let value: serde_json::Value = serde_json::from_slice(header)
        .map_err(|e| Error::CorruptHeader(format!("weights manifest is not JSON: {e}")))?;
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version != u64::from(VERSION) {
        return Err(Error::VersionMismatch {
            found: version as u32,
            expected: VERSION,
        });
    }
    let m: WeightsManifest =
        serde_json::from_value(value).map_err(|e| Error::CorruptHeader(format!("malformed weights manifest: {e}")))?;
    Ok((m, payload))
}

/// Precision recorded in a weights file.
pub fn stored_precision(path: impl AsRef<Path>) -> Result<Precision> {
    let bytes = container::read(path.as_ref())?;
    Ok(parse_manifest(&bytes)?.0.precision)
}

impl<F: Real> ModelParams<F> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut payload = Vec::with_capacity(self.num_parameters() * F::BYTES);
        let mut tensors = Vec::new();
        for (i, l) in self.layers().iter().enumerate() {
            if l.weight.is_empty() && l.bias.is_empty() {
                continue;
            }
            tensors.push(TensorRecord {
                layer: i,
                name: "weight".into(),
                shape: l.weight.shape().to_vec(),
                offset: payload.len(),
            });
            l.weight.iter().for_each(|&x| x.write_le(&mut payload));
            tensors.push(TensorRecord {
                layer: i,
                name: "bias".into(),
                shape: l.bias.shape().to_vec(),
                offset: payload.len(),
            });
            l.bias.iter().for_each(|&x| x.write_le(&mut payload));
        }
        let manifest = WeightsManifest {
            format: "amc-weights".into(),
            version: VERSION,
            precision: F::PRECISION,
            input_rows: self.input_rows(),
            init_seed: self.init_seed(),
            specs: self.specs().to_vec(),
            tensors,
        };
        container::write(path.as_ref(), MAGIC, &serde_json::to_vec(&manifest)?, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&container::read(path.as_ref())?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, payload) = parse_manifest(bytes)?;
        if m.precision != F::PRECISION {
            return Err(Error::Config(format!(
                "weights stored as {}, requested {}",
                m.precision,
                F::PRECISION
            )));
        }
        let mut layers: Vec<LayerParams<F>> = Vec::with_capacity(m.specs.len());
        let mut cursor = 0usize;
        let mut records = m.tensors.iter();
        for (i, spec) in m.specs.iter().enumerate() {
            let Some((rows, cols)) = spec.weight_shape() else {
                layers.push(LayerParams {
                    weight: ndarray::Array2::zeros((0, 0)),
                    bias: ndarray::Array1::zeros(0),
                });
                continue;
            };
            let mut take = |name: &str, count: usize| -> Result<Vec<F>> {
                let rec = records
                    .next()
                    .filter(|r| r.layer == i && r.name == name && r.offset == cursor)
                    .ok_or_else(|| Error::CorruptHeader(format!("layer {i}: missing {name} record")))?;
                if rec.shape.iter().product::<usize>() != count {
                    return Err(Error::CorruptHeader(format!("layer {i}: {name} shape {:?}", rec.shape)));
                }
                let end = cursor + count * F::BYTES;
                if payload.len() < end {
                    return Err(Error::TruncatedPayload {
                        expected: end,
                        found: payload.len(),
                    });
                }
                let out = payload[cursor..end].chunks_exact(F::BYTES).map(F::read_le).collect();
                cursor = end;
                Ok(out)
            };
            let weight = take("weight", rows * cols)?;
            let bias = take("bias", cols)?;
            layers.push(LayerParams {
                weight: ndarray::Array2::from_shape_vec((rows, cols), weight).expect("sized"),
                bias: ndarray::Array1::from_vec(bias),
            });
        }
        if records.next().is_some() || cursor != payload.len() {
            return Err(Error::CorruptHeader("weights payload has extra data".into()));
        }
        ModelParams::from_parts(m.specs, m.input_rows, m.init_seed, layers)
            .map_err(|e| Error::CorruptHeader(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ArchitectureConfig;

    #[test]
    fn round_trip_both_precisions() {
        let dir = tempfile::tempdir().unwrap();
        let specs = ArchitectureConfig::desk().layer_specs(32, 4).unwrap();
        let m64 = ModelParams::<f64>::init(specs.clone(), 32, 99).unwrap();
        let m32 = ModelParams::<f32>::init(specs, 32, 99).unwrap();
        m64.save(dir.path().join("a.weights")).unwrap();
        m32.save(dir.path().join("b.weights")).unwrap();
        assert_eq!(ModelParams::<f64>::load(dir.path().join("a.weights")).unwrap(), m64);
        assert_eq!(ModelParams::<f32>::load(dir.path().join("b.weights")).unwrap(), m32);
        assert_eq!(stored_precision(dir.path().join("b.weights")).unwrap(), Precision::F32);
        assert!(ModelParams::<f32>::load(dir.path().join("a.weights")).is_err());
    }

    #[test]
    fn truncated_weights_detected() {
        let dir = tempfile::tempdir().unwrap();
        let specs = ArchitectureConfig::desk().layer_specs(16, 3).unwrap();
        let path = dir.path().join("w");
        ModelParams::<f32>::init(specs, 16, 1).unwrap().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(
            ModelParams::<f32>::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedPayload { .. })
        ));
    }
}
