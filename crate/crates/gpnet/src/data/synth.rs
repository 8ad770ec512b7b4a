//! Seeded synthetic dense-labeling dataset: textured background plus 1-3
//! randomly placed, sized, and oriented shapes (rectangle, disc, triangle),
//! one geometry per foreground class. Class textures overlap enough under
//! pixel noise that single-pixel classification is ambiguous and the
//! surrounding neighborhood matters.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SegSample;
use crate::error::{GpError, Result};
use crate::tensor::{LabelMap, Tensor};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub num_classes: usize,
    /// Additive per-pixel Gaussian noise.
    pub sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            count: 100,
            size: 64,
            num_classes: 4,
            sigma: 0.35,
        }
    }
}

// Base colors per class; foreground classes cycle if num_classes > 4.
const BASE_COLORS: [[f64; 3]; 4] = [
    [0.25, 0.25, 0.25],
    [0.75, 0.35, 0.35],
    [0.35, 0.75, 0.35],
    [0.35, 0.35, 0.75],
];

fn base_color(class: usize) -> [f64; 3] {
    BASE_COLORS[(class - 1) % 3 + 1]
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, rot: f64 },
    Disc { cx: f64, cy: f64, r: f64 },
    Triangle { cx: f64, cy: f64, r: f64, rot: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { cx, cy, hw, hh, rot } => {
                let (dx, dy) = (x - cx, y - cy);
                let (c, s) = (rot.cos(), rot.sin());
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                u.abs() <= hw && v.abs() <= hh
            }
            Shape::Disc { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Triangle { cx, cy, r, rot } => {
                let verts: Vec<(f64, f64)> = (0..3)
                    .map(|i| {
                        let a = rot + i as f64 * std::f64::consts::TAU / 3.0;
                        (cx + r * a.cos(), cy + r * a.sin())
                    })
                    .collect();
                point_in_triangle(x, y, verts[0], verts[1], verts[2])
            }
        }
    }
}

fn point_in_triangle(px: f64, py: f64, a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> bool {
    let cross = |o: (f64, f64), p: (f64, f64), q: (f64, f64)| {
        (p.0 - o.0) * (q.1 - o.1) - (p.1 - o.1) * (q.0 - o.0)
    };
    let d1 = cross(a, b, (px, py));
    let d2 = cross(b, c, (px, py));
    let d3 = cross(c, a, (px, py));
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}

/// Class-specific texture value at a pixel: base color plus a directional
/// stripe pattern whose orientation and frequency depend on the class.
fn texture(class: usize, ch: usize, x: f64, y: f64) -> f64 {
    let color = if class == 0 {
        BASE_COLORS[0]
    } else {
        base_color(class)
    };
    let (fx, fy, amp) = match class % 4 {
        0 => (0.25, 0.25, 0.06),
        1 => (0.9, 0.0, 0.08),
        2 => (0.0, 0.9, 0.08),
        _ => (0.65, 0.65, 0.08),
    };
    color[ch] + amp * (fx * x + fy * y).sin()
}

/// Deterministic generator: the dataset is a pure function of the config.
pub fn gen_synthetic_seg(cfg: &SynthConfig) -> Result<Vec<SegSample>> {
    if cfg.num_classes < 2 {
        return Err(GpError::InvalidArgument(
            "need at least background plus one object class".into(),
        ));
    }
    let min_extent = 5.0;
    if (cfg.size as f64) < 4.0 * min_extent {
        return Err(GpError::InvalidArgument(format!(
            "image size {} too small for minimum shape extent",
            cfg.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE)).unwrap();
    let s = cfg.size;
    let sf = s as f64;

    let mut samples = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let n_shapes = rng.gen_range(1..=3usize);
        let shapes: Vec<(usize, Shape)> = (0..n_shapes)
            .map(|_| {
                let class = rng.gen_range(1..cfg.num_classes);
                let cx = rng.gen_range(0.2 * sf..0.8 * sf);
                let cy = rng.gen_range(0.2 * sf..0.8 * sf);
                let rot = rng.gen_range(0.0..std::f64::consts::TAU);
                let shape = match (class - 1) % 3 {
                    0 => Shape::Rect {
                        cx,
                        cy,
                        hw: rng.gen_range(min_extent..0.22 * sf),
                        hh: rng.gen_range(min_extent..0.22 * sf),
                        rot,
                    },
                    1 => Shape::Disc {
                        cx,
                        cy,
                        r: rng.gen_range(min_extent..0.22 * sf),
                    },
                    _ => Shape::Triangle {
                        cx,
                        cy,
                        r: rng.gen_range(1.2 * min_extent..0.26 * sf),
                        rot,
                    },
                };
                (class, shape)
            })
            .collect();

        let mut labels = LabelMap::filled(s, s, 0);
        let mut image = Tensor::zeros(&[3, s, s]);
        for py in 0..s {
            for px in 0..s {
                let (xf, yf) = (px as f64 + 0.5, py as f64 + 0.5);
                // later shapes draw on top of earlier ones
                let mut class = 0usize;
                for &(c, ref shape) in &shapes {
                    if shape.contains(xf, yf) {
                        class = c;
                    }
                }
                labels.set(py, px, class as u32);
                for ch in 0..3 {
                    let v = texture(class, ch, xf, yf) + noise.sample(&mut rng);
                    image.data_mut()[(ch * s + py) * s + px] = v;
                }
            }
        }
        samples.push(SegSample {
            image,
            labels,
            id: format!("synth-{}-{i:05}", cfg.seed),
        });
    }
    Ok(samples)
}
