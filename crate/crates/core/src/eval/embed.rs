use crate::error::{Error, Result};
use crate::numerics::{LayerSpec, SeededRng, Sequential, Tensor};

/// Width of random-feature embeddings.
pub const EMBED_DIM: usize = 64;

const EMBED_INIT_STD: f64 = 0.2;

/// Fixed random convolutional feature extractor: two stride-2 3×3 conv
/// layers with leaky ReLU, then global sum pooling to 64 features.
///
/// Weights depend only on `seed` and the input channel count; biases are
/// zero. Distances in this space are not comparable to Inception-based
/// scores.
pub fn random_feature_extractor(in_channels: usize, seed: u64) -> Result<Sequential> {
    let mut rng = SeededRng::new(seed);
    let specs = [
        LayerSpec::Conv2d {
            in_channels,
            out_channels: 32,
            kernel: 3,
            stride: 2,
        },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::Conv2d {
            in_channels: 32,
            out_channels: EMBED_DIM,
            kernel: 3,
            stride: 2,
        },
        LayerSpec::LeakyRelu { slope: 0.2 },
        LayerSpec::GlobalSumPool,
    ];
    Sequential::with_init_std(&specs, &mut rng, EMBED_INIT_STD)
}

/// Embeds `n×c×h×w` images (h, w ≥ 7) into `n×64` features.
pub fn random_feature_embed(images: &Tensor, seed: u64) -> Result<Tensor> {
    if images.rank() != 4 {
        return Err(Error::dim(format!(
            "random_feature_embed needs n×c×h×w images, got {:?}",
            images.shape()
        )));
    }
    let net = random_feature_extractor(images.shape()[1], seed)?;
    // Embed in chunks to bound the size of intermediate maps.
    let mut parts = Vec::new();
    let n = images.rows();
    let chunk = 256;
    for start in (0..n).step_by(chunk) {
        let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
        parts.push(net.infer(&images.select_rows(&idx)?)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_rows(&refs)
}
