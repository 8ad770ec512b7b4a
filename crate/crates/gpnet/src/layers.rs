//! Layer kinds and their forward / reverse-mode kernels.
//!
//! All kernels are plain nested loops over row-major buffers. Determinism
//! rules: max-pool ties route to the first maximal element in row-major
//! window order; relu passes gradient only where the input is strictly
//! positive; bilinear upsampling uses the align-corners-false convention.

use crate::error::{GpError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    /// weights [C_out, C_in, kH, kW], bias [C_out], zero padding.
    Conv2d {
        weights: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    Relu,
    /// weights [N_out, N_in], bias [N_out].
    Linear {
        weights: Tensor,
        bias: Tensor,
    },
    /// Bilinear interpolation to a fixed output size, align-corners-false.
    BilinearUpsample {
        out_h: usize,
        out_w: usize,
    },
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Layer {
            name: name.into(),
            kind,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv2d { .. } | LayerKind::Linear { .. }
        )
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            LayerKind::Conv2d { weights, bias, .. } => weights.len() + bias.len(),
            LayerKind::Linear { weights, bias } => weights.len() + bias.len(),
            _ => 0,
        }
    }

    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => {
                let [c_out, c_in, kh, kw] = conv_dims(weights)?;
                let (c, h, w) = chw(in_shape, &self.name)?;
                if c != c_in {
                    return Err(GpError::shape(
                        &[c_in],
                        &[c],
                        format!("{}: input channels", self.name),
                    ));
                }
                if h + 2 * padding < kh || w + 2 * padding < kw {
                    return Err(GpError::InvalidArgument(format!(
                        "{}: kernel {kh}x{kw} larger than padded input {h}x{w}",
                        self.name
                    )));
                }
                let oh = (h + 2 * padding - kh) / stride + 1;
                let ow = (w + 2 * padding - kw) / stride + 1;
                Ok(vec![c_out, oh, ow])
            }
            LayerKind::MaxPool2d { window, stride } => {
                let (c, h, w) = chw(in_shape, &self.name)?;
                if h < *window || w < *window {
                    return Err(GpError::InvalidArgument(format!(
                        "{}: pool window {window} larger than input {h}x{w}",
                        self.name
                    )));
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerKind::Relu => Ok(in_shape.to_vec()),
            LayerKind::Linear { weights, .. } => {
                let n_out = weights.shape()[0];
                let n_in = weights.shape()[1];
                let flat: usize = in_shape.iter().product();
                if in_shape.len() != 1 || flat != n_in {
                    return Err(GpError::shape(
                        &[n_in],
                        in_shape,
                        format!("{}: linear input", self.name),
                    ));
                }
                Ok(vec![n_out])
            }
            LayerKind::BilinearUpsample { out_h, out_w } => {
                let (c, _, _) = chw(in_shape, &self.name)?;
                Ok(vec![c, *out_h, *out_w])
            }
            LayerKind::Flatten => Ok(vec![in_shape.iter().product()]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out_shape = self.out_shape(x.shape())?;
        match &self.kind {
            LayerKind::Conv2d {
                weights,
                bias,
                stride,
                padding,
            } => conv2d_forward(x, weights, bias, *stride, *padding, &out_shape),
            LayerKind::MaxPool2d { window, stride } => {
                maxpool_forward(x, *window, *stride, &out_shape)
            }
            LayerKind::Relu => Ok(x.map(|v| if v > 0.0 { v } else { 0.0 })),
            LayerKind::Linear { weights, bias } => linear_forward(x, weights, bias),
            LayerKind::BilinearUpsample { out_h, out_w } => {
                Ok(bilinear_forward(x, *out_h, *out_w))
            }
            LayerKind::Flatten => x.reshaped(&out_shape),
        }
    }

    /// Vector-Jacobian product: gradient w.r.t. this layer's input, given the
    /// gradient w.r.t. its output and the cached input activation.
    pub fn backward_input(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match &self.kind {
            LayerKind::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => conv2d_backward_input(x, weights, grad_out, *stride, *padding),
            LayerKind::MaxPool2d { window, stride } => {
                maxpool_backward(x, grad_out, *window, *stride)
            }
            LayerKind::Relu => {
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                Ok(g)
            }
            LayerKind::Linear { weights, .. } => linear_backward_input(weights, grad_out),
            LayerKind::BilinearUpsample { .. } => {
                let (c, h, w) = chw(x.shape(), &self.name)?;
                Ok(bilinear_backward(grad_out, c, h, w))
            }
            LayerKind::Flatten => grad_out.reshaped(x.shape()),
        }
    }

    /// Gradients w.r.t. this layer's parameters, or None for parameterless
    /// layers. Returns (d_weights, d_bias).
    pub fn backward_params(&self, x: &Tensor, grad_out: &Tensor) -> Result<Option<(Tensor, Tensor)>> {
        match &self.kind {
            LayerKind::Conv2d {
                weights,
                stride,
                padding,
                ..
            } => conv2d_backward_params(x, weights, grad_out, *stride, *padding).map(Some),
            LayerKind::Linear { weights, .. } => {
                let n_out = weights.shape()[0];
                let n_in = weights.shape()[1];
                let mut dw = Tensor::zeros(&[n_out, n_in]);
                let mut db = Tensor::zeros(&[n_out]);
                {
                    let dwd = dw.data_mut();
                    for o in 0..n_out {
                        let g = grad_out.data()[o];
                        let row = &mut dwd[o * n_in..(o + 1) * n_in];
                        for (rv, &xv) in row.iter_mut().zip(x.data()) {
                            *rv = g * xv;
                        }
                    }
                }
                db.data_mut().copy_from_slice(grad_out.data());
                Ok(Some((dw, db)))
            }
            _ => Ok(None),
        }
    }
}

fn chw(shape: &[usize], name: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(GpError::InvalidArgument(format!(
            "{name}: expected [C,H,W] input, got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

fn conv_dims(weights: &Tensor) -> Result<[usize; 4]> {
    let s = weights.shape();
    if s.len() != 4 {
        return Err(GpError::InvalidArgument(format!(
            "conv weights must be [C_out,C_in,kH,kW], got {s:?}"
        )));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

fn conv2d_forward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
) -> Result<Tensor> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let [c_out, _, kh, kw] = conv_dims(weights)?;
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let wd = weights.data();
    let od = out.data_mut();
    for co in 0..c_out {
        let b = bias.data()[co];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b;
                let iy0 = (oy * stride) as isize - padding as isize;
                let ix0 = (ox * stride) as isize - padding as isize;
                for ci in 0..c_in {
                    let xplane = ci * h * w;
                    let wbase = ((co * c_in + ci) * kh) * kw;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xplane + iy as usize * w;
                        let wrow = wbase + ky * kw;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += xd[xrow + ix as usize] * wd[wrow + kx];
                        }
                    }
                }
                od[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok(out)
}

fn conv2d_backward_input(
    x: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let [c_out, _, kh, kw] = conv_dims(weights)?;
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gin = Tensor::zeros(x.shape());
    let gd = grad_out.data();
    let wd = weights.data();
    let gid = gin.data_mut();
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gd[(co * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                let iy0 = (oy * stride) as isize - padding as isize;
                let ix0 = (ox * stride) as isize - padding as isize;
                for ci in 0..c_in {
                    let xplane = ci * h * w;
                    let wbase = ((co * c_in + ci) * kh) * kw;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = xplane + iy as usize * w;
                        let wrow = wbase + ky * kw;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            gid[xrow + ix as usize] += g * wd[wrow + kx];
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

fn conv2d_backward_params(
    x: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let [c_out, _, kh, kw] = conv_dims(weights)?;
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut dw = Tensor::zeros(weights.shape());
    let mut db = Tensor::zeros(&[c_out]);
    let xd = x.data();
    let gd = grad_out.data();
    {
        let dwd = dw.data_mut();
        for co in 0..c_out {
            let mut bacc = 0.0;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gd[(co * oh + oy) * ow + ox];
                    bacc += g;
                    if g == 0.0 {
                        continue;
                    }
                    let iy0 = (oy * stride) as isize - padding as isize;
                    let ix0 = (ox * stride) as isize - padding as isize;
                    for ci in 0..c_in {
                        let xplane = ci * h * w;
                        let wbase = ((co * c_in + ci) * kh) * kw;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xplane + iy as usize * w;
                            let wrow = wbase + ky * kw;
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                dwd[wrow + kx] += g * xd[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
            db.data_mut()[co] = bacc;
        }
    }
    Ok((dw, db))
}

fn maxpool_forward(x: &Tensor, window: usize, stride: usize, out_shape: &[usize]) -> Result<Tensor> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let od = out.data_mut();
    for ci in 0..c {
        let plane = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..window {
                    let row = plane + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = xd[row + kx];
                        if v > best {
                            best = v;
                        }
                    }
                }
                od[(ci * oh + oy) * ow + ox] = best;
            }
        }
    }
    Ok(out)
}

fn maxpool_backward(x: &Tensor, grad_out: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gin = Tensor::zeros(x.shape());
    let xd = x.data();
    let gd = grad_out.data();
    let gid = gin.data_mut();
    for ci in 0..c {
        let plane = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                // first maximal element in row-major window order wins
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..window {
                    let row = plane + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        let v = xd[row + kx];
                        if v > best {
                            best = v;
                            best_idx = row + kx;
                        }
                    }
                }
                gid[best_idx] += gd[(ci * oh + oy) * ow + ox];
            }
        }
    }
    Ok(gin)
}

fn linear_forward(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n_out = weights.shape()[0];
    let n_in = weights.shape()[1];
    let mut out = Tensor::zeros(&[n_out]);
    let xd = x.data();
    let wd = weights.data();
    let od = out.data_mut();
    for o in 0..n_out {
        let row = &wd[o * n_in..(o + 1) * n_in];
        let mut acc = bias.data()[o];
        for (rv, xv) in row.iter().zip(xd) {
            acc += rv * xv;
        }
        od[o] = acc;
    }
    Ok(out)
}

fn linear_backward_input(weights: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let n_out = weights.shape()[0];
    let n_in = weights.shape()[1];
    let mut gin = Tensor::zeros(&[n_in]);
    let wd = weights.data();
    let gd = grad_out.data();
    let gid = gin.data_mut();
    for o in 0..n_out {
        let g = gd[o];
        if g == 0.0 {
            continue;
        }
        let row = &wd[o * n_in..(o + 1) * n_in];
        for (giv, rv) in gid.iter_mut().zip(row) {
            *giv += g * rv;
        }
    }
    Ok(gin)
}

/// Interpolation source for one output coordinate under align-corners-false:
/// returns (low index, high index, weight of high index).
fn bilinear_axis(out_idx: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = (out_idx as f64 + 0.5) * scale - 0.5;
    let src = src.clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

fn bilinear_forward(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let xd = x.data();
    let od = out.data_mut();
    for oy in 0..out_h {
        let (y0, y1, wy) = bilinear_axis(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, wx) = bilinear_axis(ox, w, out_w);
            for ci in 0..c {
                let plane = ci * h * w;
                let v = (1.0 - wy) * (1.0 - wx) * xd[plane + y0 * w + x0]
                    + (1.0 - wy) * wx * xd[plane + y0 * w + x1]
                    + wy * (1.0 - wx) * xd[plane + y1 * w + x0]
                    + wy * wx * xd[plane + y1 * w + x1];
                od[(ci * out_h + oy) * out_w + ox] = v;
            }
        }
    }
    out
}

fn bilinear_backward(grad_out: &Tensor, c: usize, h: usize, w: usize) -> Tensor {
    let (out_h, out_w) = (grad_out.shape()[1], grad_out.shape()[2]);
    let mut gin = Tensor::zeros(&[c, h, w]);
    let gd = grad_out.data();
    let gid = gin.data_mut();
    for oy in 0..out_h {
        let (y0, y1, wy) = bilinear_axis(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, wx) = bilinear_axis(ox, w, out_w);
            for ci in 0..c {
                let plane = ci * h * w;
                let g = gd[(ci * out_h + oy) * out_w + ox];
                gid[plane + y0 * w + x0] += (1.0 - wy) * (1.0 - wx) * g;
                gid[plane + y0 * w + x1] += (1.0 - wy) * wx * g;
                gid[plane + y1 * w + x0] += wy * (1.0 - wx) * g;
                gid[plane + y1 * w + x1] += wy * wx * g;
            }
        }
    }
    gin
}
