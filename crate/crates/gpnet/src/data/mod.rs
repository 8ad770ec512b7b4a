//! Dataset ingestion and generation: MNIST-format IDX files, a seeded
//! synthetic dense-labeling dataset, and a seeded digit-image generator that
//! emits IDX files when the real MNIST corpus is not on disk.

mod digits;
mod idx;
mod synth;

pub use digits::gen_digits;
pub use idx::{load_mnist, load_mnist_normalized, read_idx_images, read_idx_labels,
    write_idx_images, write_idx_labels};
pub use synth::{gen_synthetic_seg, SynthConfig};

use crate::error::{GpError, Result};
use crate::tensor::{LabelMap, Tensor};

/// A dense-labeling sample: [C,H,W] image plus per-pixel labels.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image: Tensor,
    pub labels: LabelMap,
    pub id: String,
}

/// A classification sample.
#[derive(Debug, Clone)]
pub struct ClsSample {
    pub image: Tensor,
    pub label: u32,
    pub id: String,
}

/// Per-channel mean over a set of [C,H,W] images.
pub fn channel_means(images: impl Iterator<Item = impl std::ops::Deref<Target = Tensor>>) -> Vec<f64> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for img in images {
        let c = img.shape()[0];
        let plane = img.len() / c;
        if sums.is_empty() {
            sums = vec![0.0; c];
        }
        for ch in 0..c {
            sums[ch] += img.data()[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
        }
        count += plane;
    }
    sums.into_iter().map(|s| s / count as f64).collect()
}

/// Subtract per-channel means from a [C,H,W] image.
pub fn normalize(image: &Tensor, means: &[f64]) -> Result<Tensor> {
    let c = image.shape()[0];
    if means.len() != c {
        return Err(GpError::InvalidArgument(format!(
            "{} channel means for {c}-channel image",
            means.len()
        )));
    }
    let plane = image.len() / c;
    let mut out = image.clone();
    for ch in 0..c {
        for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
            *v -= means[ch];
        }
    }
    Ok(out)
}
