//! Seeded generator of 28x28 grayscale digit images in the MNIST IDX
//! layout. Digits are stroke skeletons rendered with a soft pen, distorted
//! by a random affine map per sample. Serves as a stand-in corpus for
//! machines without the MNIST files; the loader consumes either.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const SIZE: usize = 28;

type Point = (f64, f64);

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Vec<Point> {
    (0..=n)
        .map(|i| {
            let t = a0 + (a1 - a0) * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Stroke skeleton for one digit, as polylines in the unit square
/// (x right, y down).
fn strokes(digit: u8) -> Vec<Vec<Point>> {
    use std::f64::consts::PI;
    match digit {
        0 => vec![arc(0.5, 0.5, 0.24, 0.36, 0.0, 2.0 * PI, 24)],
        1 => vec![vec![(0.35, 0.28), (0.52, 0.12), (0.52, 0.88)]],
        2 => {
            let mut top = arc(0.5, 0.32, 0.22, 0.2, -PI, 0.0, 12);
            top.extend([(0.68, 0.45), (0.3, 0.88)]);
            vec![top, vec![(0.3, 0.88), (0.74, 0.88)]]
        }
        3 => vec![
            arc(0.46, 0.3, 0.2, 0.18, -0.8 * PI, 0.45 * PI, 12),
            arc(0.46, 0.68, 0.22, 0.2, -0.45 * PI, 0.8 * PI, 12),
        ],
        4 => vec![
            vec![(0.62, 0.12), (0.28, 0.62), (0.78, 0.62)],
            vec![(0.62, 0.12), (0.62, 0.9)],
        ],
        5 => {
            let mut s = vec![(0.7, 0.12), (0.32, 0.12), (0.3, 0.48)];
            s.extend(arc(0.47, 0.66, 0.22, 0.2, -0.5 * PI, 0.75 * PI, 14));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.62, 0.1)];
            s.extend(arc(0.48, 0.66, 0.21, 0.22, -2.1, PI * 1.6, 20));
            vec![s]
        }
        7 => vec![vec![(0.26, 0.14), (0.74, 0.14), (0.42, 0.9)]],
        8 => vec![
            arc(0.5, 0.3, 0.19, 0.17, 0.0, 2.0 * PI, 16),
            arc(0.5, 0.68, 0.22, 0.2, 0.0, 2.0 * PI, 16),
        ],
        _ => {
            let mut s = arc(0.5, 0.32, 0.2, 0.2, 0.9, 0.9 + 2.0 * PI, 16);
            s.push((0.66, 0.9));
            vec![s]
        }
    }
}

fn dist_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let (apx, apy) = (p.0 - a.0, p.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

fn dist_to_strokes(p: Point, strokes: &[Vec<Point>]) -> f64 {
    let mut best = f64::INFINITY;
    for line in strokes {
        for seg in line.windows(2) {
            best = best.min(dist_to_segment(p, seg[0], seg[1]));
        }
    }
    best
}

/// Generate `count` (image, label) pairs; images are raw u8 pixel rows of a
/// 28x28 grid. Pure function of (seed, count).
pub fn gen_digits(seed: u64, count: usize) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let digit = rng.gen_range(0..10u8);
        let skeleton = strokes(digit);

        let rot: f64 = rng.gen_range(-0.45..0.45);
        let scale = rng.gen_range(0.62..1.15);
        let shear = rng.gen_range(-0.35..0.35);
        let (tx, ty) = (rng.gen_range(-0.11..0.11), rng.gen_range(-0.11..0.11));
        let thickness = rng.gen_range(0.03..0.1);
        let contrast = rng.gen_range(0.55..1.0);
        let noise = Normal::new(0.0, rng.gen_range(10.0..45.0)).unwrap();

        let (c, s) = (rot.cos(), rot.sin());
        let mut img = vec![0u8; SIZE * SIZE];
        for py in 0..SIZE {
            for px in 0..SIZE {
                // map the pixel back into the undistorted glyph frame
                let x = (px as f64 + 0.5) / SIZE as f64 - 0.5 - tx;
                let y = (py as f64 + 0.5) / SIZE as f64 - 0.5 - ty;
                let xr = (c * x + s * y) / scale;
                let yr = (-s * x + c * y) / scale;
                let xs = xr - shear * yr;
                let d = dist_to_strokes((xs + 0.5, yr + 0.5), &skeleton);
                // soft pen edge
                let intensity = ((thickness - d) / 0.02 + 0.5).clamp(0.0, 1.0);
                let v = 255.0 * contrast * intensity + noise.sample(&mut rng);
                img[py * SIZE + px] = v.clamp(0.0, 255.0) as u8;
            }
        }
        images.push(img);
        labels.push(digit);
    }
    (images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labeled() {
        let (a_img, a_lab) = gen_digits(42, 8);
        let (b_img, b_lab) = gen_digits(42, 8);
        assert_eq!(a_img, b_img);
        assert_eq!(a_lab, b_lab);
        assert!(a_lab.iter().all(|&l| l < 10));
        assert_eq!(a_img[0].len(), 28 * 28);
    }

    #[test]
    fn digits_have_ink() {
        let (imgs, _) = gen_digits(1, 20);
        for img in imgs {
            let ink = img.iter().filter(|&&v| v > 128).count();
            assert!(ink > 20, "digit with only {ink} bright pixels");
        }
    }
}
