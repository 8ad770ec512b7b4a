//! IDX container format, as shipped by the MNIST distribution: big-endian
//! magic (0x00000803 for u8 image stacks, 0x00000801 for u8 label vectors),
//! big-endian dimension sizes, then the raw payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::ClsSample;
use crate::error::{GpError, Result};
use crate::tensor::Tensor;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| GpError::Format("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(b))
}

/// Images as [1,H,W] tensors with pixels scaled to [0,1].
pub fn read_idx_images(path: &Path) -> Result<Vec<Tensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r)?;
    if magic != IMAGES_MAGIC {
        return Err(GpError::Format(format!(
            "bad IDX image magic {magic:#010x} in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut r)? as usize;
    let h = read_u32_be(&mut r)? as usize;
    let w = read_u32_be(&mut r)? as usize;
    let mut payload = vec![0u8; count * h * w];
    r.read_exact(&mut payload)
        .map_err(|_| GpError::Format(format!("truncated IDX image payload in {}", path.display())))?;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let data = payload[i * h * w..(i + 1) * h * w]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        images.push(Tensor::new(vec![1, h, w], data)?);
    }
    Ok(images)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_u32_be(&mut r)?;
    if magic != LABELS_MAGIC {
        return Err(GpError::Format(format!(
            "bad IDX label magic {magic:#010x} in {}",
            path.display()
        )));
    }
    let count = read_u32_be(&mut r)? as usize;
    let mut payload = vec![0u8; count];
    r.read_exact(&mut payload)
        .map_err(|_| GpError::Format(format!("truncated IDX label payload in {}", path.display())))?;
    Ok(payload)
}

/// Write u8 images (row-major, one [H,W] block per image) as an IDX file.
pub fn write_idx_images(path: &Path, images: &[Vec<u8>], h: usize, w: usize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&IMAGES_MAGIC.to_be_bytes())?;
    f.write_all(&(images.len() as u32).to_be_bytes())?;
    f.write_all(&(h as u32).to_be_bytes())?;
    f.write_all(&(w as u32).to_be_bytes())?;
    for img in images {
        if img.len() != h * w {
            return Err(GpError::InvalidArgument(format!(
                "image has {} pixels, expected {}",
                img.len(),
                h * w
            )));
        }
        f.write_all(img)?;
    }
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&LABELS_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

/// Load an image/label IDX pair, scale pixels to [0,1], and subtract the
/// mean of this set. Use `load_mnist_normalized` to apply a mean computed
/// elsewhere (e.g. the training mean stored in a model file).
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Vec<ClsSample>> {
    let images = read_idx_images(images_path)?;
    let mean = super::channel_means(images.iter())[0];
    assemble(images, read_idx_labels(labels_path)?, mean)
}

pub fn load_mnist_normalized(
    images_path: &Path,
    labels_path: &Path,
    mean: f64,
) -> Result<Vec<ClsSample>> {
    let images = read_idx_images(images_path)?;
    assemble(images, read_idx_labels(labels_path)?, mean)
}

fn assemble(images: Vec<Tensor>, labels: Vec<u8>, mean: f64) -> Result<Vec<ClsSample>> {
    if images.len() != labels.len() {
        return Err(GpError::Format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (img, label))| ClsSample {
            image: img.map(|v| v - mean),
            label: label as u32,
            id: format!("idx-{i:05}"),
        })
        .collect())
}
