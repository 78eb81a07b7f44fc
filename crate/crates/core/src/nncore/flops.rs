use super::layers::{LayerKind, LayerSpec};

/// Multiply-accumulate count of one inference pass:
/// `C_in * C_out * K_h * K_w * H * W` per conv layer plus `in * out` per
/// dense (and softmax output) layer.
pub fn flop_count(specs: &[LayerSpec]) -> u64 {
    specs
        .iter()
        .map(|s| match s.kind {
            LayerKind::Conv => [s.in_channels, s.out_channels, s.kernel.0, s.kernel.1, s.out_h, s.out_w]
                .iter()
                .map(|&d| d as u64)
                .product(),
            LayerKind::Dense | LayerKind::SoftmaxOutput => s.in_channels as u64 * s.out_channels as u64,
            LayerKind::Flatten => 0,
        })
        .sum()
}
