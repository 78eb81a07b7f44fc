//! A small convolutional classifier written out by hand.
//!
//! The network maps an `len x 2` IQ matrix (a one-channel image) to a
//! softmax distribution over `C` classes. Convolutions use valid padding and
//! stride one; activations are stored channels-last and flattened per sample
//! so every layer works on a `[batch, features]` matrix. Forward and backward
//! passes are exact for the fixed layer vocabulary (conv, dense, flatten,
//! softmax output), including gradients with respect to the input.

mod flops;
mod io;
mod layers;
mod model;
mod train;

use std::fmt::{Debug, Display};

use ndarray::NdFloat;
use num_traits::FromPrimitive;
use serde::{Deserialize, Serialize};

pub use flops::flop_count;
pub use io::stored_precision;
pub use layers::{
    validate_specs, Activation, ArchitectureConfig, ConvLayerConfig, DenseLayerConfig, LayerKind, LayerSpec,
};
pub use model::{
    forward, forward_batch, input_gradient, input_gradient_batch, loss, param_gradients, Gradients, LayerParams,
    ModelParams, PROB_CLIP_MIN,
};
pub(crate) use train::design_matrix;
pub use train::{sgd_step, train, TrainConfig, Trained};

/// Floating point precision a model computes and stores in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(crate::Error::Config(format!("unknown precision {s:?}"))),
        }
    }
}

/// Scalar type the network is generic over.
pub trait Real: NdFloat + FromPrimitive + Default + Debug + Send + Sync + 'static {
    const PRECISION: Precision;
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    const BYTES: usize = 4;

    fn of(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    const BYTES: usize = 8;

    fn of(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Forward-pass mode. Training mode applies inverted dropout with masks
/// drawn from `dropout_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}
