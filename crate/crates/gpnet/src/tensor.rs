//! Dense row-major f64 tensors and integer label maps.
//!
//! Tensors are treated as immutable values once handed out of a public
//! operation; every public op returns a fresh tensor.

use crate::error::{GpError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(GpError::InvalidArgument(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(GpError::shape(shape, &self.shape, "reshape"));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Tensor {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        axpy(1.0, self, other)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(GpError::shape(&self.shape, &other.shape, "dot"));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Elementwise signum; values land in {-1, 0, +1}.
pub fn sign(t: &Tensor) -> Tensor {
    t.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// a*x + y, elementwise.
pub fn axpy(a: f64, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape != y.shape {
        return Err(GpError::shape(&x.shape, &y.shape, "axpy"));
    }
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(xv, yv)| a * xv + yv)
        .collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Integer label map over an image grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(GpError::InvalidArgument(format!(
                "label map length {} does not match {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u32) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u32) {
        self.labels[row * self.width + col] = label;
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-pixel argmax over the channel axis of a [C,H,W] tensor.
/// Ties break to the lowest channel index.
pub fn argmax_channel(t: &Tensor) -> Result<LabelMap> {
    if t.shape().len() != 3 || t.is_empty() {
        return Err(GpError::InvalidArgument(format!(
            "argmax_channel expects a non-empty [C,H,W] tensor, got {:?}",
            t.shape()
        )));
    }
    let (c, h, w) = (t.shape[0], t.shape[1], t.shape[2]);
    let plane = h * w;
    let mut labels = vec![0u32; plane];
    for p in 0..plane {
        let mut best = 0usize;
        let mut best_v = t.data[p];
        for ch in 1..c {
            let v = t.data[ch * plane + p];
            if v > best_v {
                best_v = v;
                best = ch;
            }
        }
        labels[p] = best as u32;
    }
    Ok(LabelMap {
        height: h,
        width: w,
        labels,
    })
}

/// Argmax of a flat score vector; ties break to the lowest index.
pub fn argmax_vec(scores: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}
