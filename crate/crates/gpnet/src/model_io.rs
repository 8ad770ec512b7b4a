//! The "GPN1" model container. Byte layout, all integers little-endian
//! unless noted, parameters as raw little-endian f64 so round-trips are
//! bit-exact:
//!
//! ```text
//! magic            4 bytes  "GPN1"
//! version          u32      currently 1
//! input rank       u32      followed by that many u32 extents
//! num_classes      u32
//! n_channel_means  u32      followed by that many f64
//! n_layers         u32
//! per layer:
//!   kind tag       u8       0 conv2d, 1 maxpool2d, 2 relu, 3 linear,
//!                           4 bilinear_upsample, 5 flatten
//!   name           u32 length + utf-8 bytes
//!   conv2d:        u32 c_out, c_in, kh, kw, stride, padding;
//!                  f64 weights [c_out*c_in*kh*kw]; f64 bias [c_out]
//!   maxpool2d:     u32 window, stride
//!   linear:        u32 n_out, n_in; f64 weights [n_out*n_in]; f64 bias
//!   upsample:      u32 out_h, out_w
//! index flag       u8       0 = absent, 1 = present
//! if present:
//!   feature layer  u32 length + utf-8 bytes
//!   dim, count     u32, u32
//!   per entry:     u32 label; u32 id length + utf-8 bytes; f64 [dim]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{GpError, Result};
use crate::knn::{FeatureIndex, IndexEntry};
use crate::layers::{Layer, LayerKind};
use crate::network::Network;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"GPN1";
const VERSION: u32 = 1;

pub fn save_model(path: &Path, net: &Network, index: Option<&FeatureIndex>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, net.input_shape().len() as u32)?;
    for &d in net.input_shape() {
        put_u32(&mut w, d as u32)?;
    }
    put_u32(&mut w, net.num_classes() as u32)?;
    put_u32(&mut w, net.channel_means.len() as u32)?;
    for &m in &net.channel_means {
        put_f64(&mut w, m)?;
    }
    put_u32(&mut w, net.layers().len() as u32)?;
    for layer in net.layers() {
        save_layer(&mut w, layer)?;
    }
    match index {
        None => w.write_all(&[0u8])?,
        Some(idx) => {
            w.write_all(&[1u8])?;
            put_str(&mut w, &idx.feature_layer)?;
            let dim = idx.entries.first().map_or(0, |e| e.feature.len());
            put_u32(&mut w, dim as u32)?;
            put_u32(&mut w, idx.entries.len() as u32)?;
            for e in &idx.entries {
                put_u32(&mut w, e.label)?;
                put_str(&mut w, &e.id)?;
                for &v in e.feature.data() {
                    put_f64(&mut w, v)?;
                }
            }
        }
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Network, Option<FeatureIndex>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| GpError::Format("truncated model file".into()))?;
    if &magic != MAGIC {
        return Err(GpError::Format(format!(
            "bad model magic {magic:?}, expected \"GPN1\""
        )));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(GpError::Format(format!("unsupported model version {version}")));
    }
    let rank = get_u32(&mut r)? as usize;
    let input_shape: Vec<usize> = (0..rank)
        .map(|_| get_u32(&mut r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let num_classes = get_u32(&mut r)? as usize;
    let n_means = get_u32(&mut r)? as usize;
    let means: Vec<f64> = (0..n_means).map(|_| get_f64(&mut r)).collect::<Result<_>>()?;
    let n_layers = get_u32(&mut r)? as usize;
    let layers: Vec<Layer> = (0..n_layers).map(|_| load_layer(&mut r)).collect::<Result<_>>()?;
    let mut net = Network::new(layers, input_shape, num_classes)?;
    net.channel_means = means;

    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)
        .map_err(|_| GpError::Format("truncated model file (index flag)".into()))?;
    let index = if flag[0] == 1 {
        let feature_layer = get_str(&mut r)?;
        let dim = get_u32(&mut r)? as usize;
        let count = get_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let label = get_u32(&mut r)?;
            let id = get_str(&mut r)?;
            let data: Vec<f64> = (0..dim).map(|_| get_f64(&mut r)).collect::<Result<_>>()?;
            entries.push(IndexEntry {
                feature: Tensor::new(vec![dim], data)?,
                label,
                id,
            });
        }
        Some(FeatureIndex {
            entries,
            feature_layer,
        })
    } else {
        None
    };
    Ok((net, index))
}

fn save_layer(w: &mut impl Write, layer: &Layer) -> Result<()> {
    match &layer.kind {
        LayerKind::Conv2d {
            weights,
            bias,
            stride,
            padding,
        } => {
            w.write_all(&[0u8])?;
            put_str(w, &layer.name)?;
            for &d in weights.shape() {
                put_u32(w, d as u32)?;
            }
            put_u32(w, *stride as u32)?;
            put_u32(w, *padding as u32)?;
            put_blob(w, weights)?;
            put_blob(w, bias)?;
        }
        LayerKind::MaxPool2d { window, stride } => {
            w.write_all(&[1u8])?;
            put_str(w, &layer.name)?;
            put_u32(w, *window as u32)?;
            put_u32(w, *stride as u32)?;
        }
        LayerKind::Relu => {
            w.write_all(&[2u8])?;
            put_str(w, &layer.name)?;
        }
        LayerKind::Linear { weights, bias } => {
            w.write_all(&[3u8])?;
            put_str(w, &layer.name)?;
            put_u32(w, weights.shape()[0] as u32)?;
            put_u32(w, weights.shape()[1] as u32)?;
            put_blob(w, weights)?;
            put_blob(w, bias)?;
        }
        LayerKind::BilinearUpsample { out_h, out_w } => {
            w.write_all(&[4u8])?;
            put_str(w, &layer.name)?;
            put_u32(w, *out_h as u32)?;
            put_u32(w, *out_w as u32)?;
        }
        LayerKind::Flatten => {
            w.write_all(&[5u8])?;
            put_str(w, &layer.name)?;
        }
    }
    Ok(())
}

fn load_layer(r: &mut impl Read) -> Result<Layer> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| GpError::Format("truncated model file (layer tag)".into()))?;
    let name = get_str(r)?;
    let kind = match tag[0] {
        0 => {
            let c_out = get_u32(r)? as usize;
            let c_in = get_u32(r)? as usize;
            let kh = get_u32(r)? as usize;
            let kw = get_u32(r)? as usize;
            let stride = get_u32(r)? as usize;
            let padding = get_u32(r)? as usize;
            let weights = get_blob(r, vec![c_out, c_in, kh, kw])?;
            let bias = get_blob(r, vec![c_out])?;
            LayerKind::Conv2d {
                weights,
                bias,
                stride,
                padding,
            }
        }
        1 => LayerKind::MaxPool2d {
            window: get_u32(r)? as usize,
            stride: get_u32(r)? as usize,
        },
        2 => LayerKind::Relu,
        3 => {
            let n_out = get_u32(r)? as usize;
            let n_in = get_u32(r)? as usize;
            let weights = get_blob(r, vec![n_out, n_in])?;
            let bias = get_blob(r, vec![n_out])?;
            LayerKind::Linear { weights, bias }
        }
        4 => LayerKind::BilinearUpsample {
            out_h: get_u32(r)? as usize,
            out_w: get_u32(r)? as usize,
        },
        5 => LayerKind::Flatten,
        t => return Err(GpError::Format(format!("unknown layer tag {t}"))),
    };
    Ok(Layer::new(name, kind))
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn put_blob(w: &mut impl Write, t: &Tensor) -> Result<()> {
    for &v in t.data() {
        put_f64(w, v)?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| GpError::Format("truncated model file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| GpError::Format("truncated model file".into()))?;
    Ok(f64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let len = get_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)
        .map_err(|_| GpError::Format("truncated model file".into()))?;
    String::from_utf8(b).map_err(|_| GpError::Format("layer name is not utf-8".into()))
}

fn get_blob(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| get_f64(r)).collect::<Result<_>>()?;
    Tensor::new(shape, data)
}
