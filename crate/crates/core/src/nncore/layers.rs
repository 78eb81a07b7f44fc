use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Dense,
    Flatten,
    SoftmaxOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
    Softmax,
}

/// One layer of the network.
///
/// For conv layers `kernel` is `(rows, cols)` over the `len x 2` input and
/// `(out_h, out_w)` is the output spatial size. Dense and softmax layers use
/// `in_channels`/`out_channels` as input/output widths with a `1x1` kernel
/// and spatial size. Flatten carries the feature count in both channel
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub out_h: usize,
    pub out_w: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        out_hw: (usize, usize),
        dropout_rate: f64,
    ) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            out_h: out_hw.0,
            out_w: out_hw.1,
            dropout_rate,
            activation: Activation::Relu,
        }
    }

    pub fn dense(inputs: usize, units: usize, dropout_rate: f64) -> Self {
        Self {
            kind: LayerKind::Dense,
            in_channels: inputs,
            out_channels: units,
            kernel: (1, 1),
            out_h: 1,
            out_w: 1,
            dropout_rate,
            activation: Activation::Relu,
        }
    }

    pub fn flatten(features: usize) -> Self {
        Self {
            kind: LayerKind::Flatten,
            in_channels: features,
            out_channels: features,
            kernel: (1, 1),
            out_h: 1,
            out_w: 1,
            dropout_rate: 0.0,
            activation: Activation::None,
        }
    }

    pub fn softmax_output(inputs: usize, classes: usize) -> Self {
        Self {
            kind: LayerKind::SoftmaxOutput,
            in_channels: inputs,
            out_channels: classes,
            kernel: (1, 1),
            out_h: 1,
            out_w: 1,
            dropout_rate: 0.0,
            activation: Activation::Softmax,
        }
    }

    /// Input spatial size of a conv layer (valid padding, stride 1).
    pub fn in_hw(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv => (self.out_h + self.kernel.0 - 1, self.out_w + self.kernel.1 - 1),
            _ => (1, 1),
        }
    }

    /// Flattened input width per sample.
    pub fn input_features(&self) -> usize {
        match self.kind {
            LayerKind::Conv => {
                let (h, w) = self.in_hw();
                h * w * self.in_channels
            }
            _ => self.in_channels,
        }
    }

    /// Flattened output width per sample.
    pub fn output_features(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.out_h * self.out_w * self.out_channels,
            _ => self.out_channels,
        }
    }

    /// `(rows, cols)` of the weight matrix, `None` for parameter-free layers.
    pub fn weight_shape(&self) -> Option<(usize, usize)> {
        match self.kind {
            LayerKind::Conv => Some((self.kernel.0 * self.kernel.1 * self.in_channels, self.out_channels)),
            LayerKind::Dense | LayerKind::SoftmaxOutput => Some((self.in_channels, self.out_channels)),
            LayerKind::Flatten => None,
        }
    }
}

/// Checks a layer list against an `input_rows x 2` input.
pub fn validate_specs(specs: &[LayerSpec], input_rows: usize) -> Result<()> {
    let bad = |i: usize, msg: String| Err(Error::InvalidArgument(format!("layer {i}: {msg}")));
    let Some(last) = specs.last() else {
        return Err(Error::InvalidArgument("empty layer list".into()));
    };
    if last.kind != LayerKind::SoftmaxOutput {
        return Err(Error::InvalidArgument("last layer must be the softmax output".into()));
    }
    // (h, w, c) while still spatial, None once flattened
    let mut spatial = Some((input_rows, 2usize, 1usize));
    let mut features = input_rows * 2;
    for (i, s) in specs.iter().enumerate() {
        if !(0.0..1.0).contains(&s.dropout_rate) {
            return bad(i, format!("dropout rate {} outside [0, 1)", s.dropout_rate));
        }
        match s.kind {
            LayerKind::Conv => {
                let Some((h, w, c)) = spatial else {
                    return bad(i, "conv after flatten".into());
                };
                if s.in_channels == 0 || s.out_channels == 0 || s.kernel.0 == 0 || s.kernel.1 == 0 {
                    return bad(i, "conv dimensions must be positive".into());
                }
                if s.out_h == 0 || s.out_w == 0 {
                    return bad(i, "kernel larger than input".into());
                }
                if s.in_hw() != (h, w) || s.in_channels != c {
                    return bad(
                        i,
                        format!("expects input {:?}x{}, got {h}x{w}x{c}", s.in_hw(), s.in_channels),
                    );
                }
                if s.activation == Activation::Softmax {
                    return bad(i, "softmax only allowed on the output layer".into());
                }
                spatial = Some((s.out_h, s.out_w, s.out_channels));
                features = s.output_features();
            }
            LayerKind::Flatten => {
                if s.in_channels != features || s.out_channels != features {
                    return bad(i, format!("flatten of {} features, got {features}", s.in_channels));
                }
                spatial = None;
            }
            LayerKind::Dense | LayerKind::SoftmaxOutput => {
                if spatial.is_some() {
                    return bad(i, "dense layer needs a flatten first".into());
                }
                if s.in_channels != features || s.out_channels == 0 {
                    return bad(i, format!("expects {} inputs, got {features}", s.in_channels));
                }
                let is_output = s.kind == LayerKind::SoftmaxOutput;
                if is_output != (i + 1 == specs.len()) {
                    return bad(i, "exactly one softmax output layer, last".into());
                }
                if is_output != (s.activation == Activation::Softmax) {
                    return bad(i, "softmax activation only on the output layer".into());
                }
                features = s.out_channels;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerConfig {
    pub filters: usize,
    /// `[rows, cols]`
    pub kernel: [usize; 2],
    #[serde(default)]
    pub dropout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayerConfig {
    pub units: usize,
    #[serde(default)]
    pub dropout: f64,
}

/// Layer widths independent of input length and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub conv: Vec<ConvLayerConfig>,
    pub dense: Vec<DenseLayerConfig>,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchitectureConfig {
    /// Reduced-width default: 32/16/8/8 filters, a 3x2 kernel that folds
    /// the IQ axis first, then 3x1 kernels, dropout 0.2 on every conv,
    /// dense 64.
    pub fn desk() -> Self {
        let conv = |filters, kernel| ConvLayerConfig {
            filters,
            kernel,
            dropout: 0.2,
        };
        Self {
            conv: vec![conv(32, [3, 2]), conv(16, [3, 1]), conv(8, [3, 1]), conv(8, [3, 1])],
            dense: vec![DenseLayerConfig {
                units: 64,
                dropout: 0.0,
            }],
        }
    }

    /// Full-width reference network: 256 (3x1), 128 (3x2), 64 (3x1),
    /// 64 (3x1), dense 128, all conv layers with dropout 0.2.
    pub fn full_width() -> Self {
        let conv = |filters, kernel| ConvLayerConfig {
            filters,
            kernel,
            dropout: 0.2,
        };
        Self {
            conv: vec![conv(256, [3, 1]), conv(128, [3, 2]), conv(64, [3, 1]), conv(64, [3, 1])],
            dense: vec![DenseLayerConfig {
                units: 128,
                dropout: 0.0,
            }],
        }
    }

    pub fn layer_specs(&self, frame_len: usize, classes: usize) -> Result<Vec<LayerSpec>> {
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("{classes} classes; need at least 2")));
        }
        let mut specs = Vec::new();
        let (mut h, mut w, mut c) = (frame_len, 2usize, 1usize);
        for (i, layer) in self.conv.iter().enumerate() {
            let [kh, kw] = layer.kernel;
            if kh == 0 || kw == 0 || kh > h || kw > w {
                return Err(Error::InvalidArgument(format!(
                    "conv {i}: kernel {kh}x{kw} does not fit input {h}x{w}"
                )));
            }
            let out = (h - kh + 1, w - kw + 1);
            specs.push(LayerSpec::conv(c, layer.filters, (kh, kw), out, layer.dropout));
            (h, w, c) = (out.0, out.1, layer.filters);
        }
        let mut features = h * w * c;
        specs.push(LayerSpec::flatten(features));
        for layer in &self.dense {
            specs.push(LayerSpec::dense(features, layer.units, layer.dropout));
            features = layer.units;
        }
        specs.push(LayerSpec::softmax_output(features, classes));
        validate_specs(&specs, frame_len)?;
        Ok(specs)
    }
}
