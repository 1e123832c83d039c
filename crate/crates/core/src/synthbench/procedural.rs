//! Seeded procedural RGB images with structure at several scales: smooth
//! color fields, random filled shapes, stripe patches and fine noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::imaging::ImageBuffer;

/// Lattice value noise with smoothstep interpolation, values in `[0, 1]`.
struct ValueNoise {
    cells: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, cells: usize) -> Self {
        let lattice = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f32>()).collect();
        ValueNoise { cells, lattice }
    }

    /// `u`, `v` in `[0, 1]`.
    fn at(&self, u: f32, v: f32) -> f32 {
        let n = self.cells as f32;
        let (fx, fy) = ((u * n).min(n - 1e-4), (v * n).min(n - 1e-4));
        let (ix, iy) = (fx as usize, fy as usize);
        let s = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (s(fx - ix as f32), s(fy - iy as f32));
        let g = |x: usize, y: usize| self.lattice[y * (self.cells + 1) + x];
        let a = g(ix, iy) * (1.0 - tx) + g(ix + 1, iy) * tx;
        let b = g(ix, iy + 1) * (1.0 - tx) + g(ix + 1, iy + 1) * tx;
        a * (1.0 - ty) + b * ty
    }
}

enum Shape {
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32, cos: f32, sin: f32 },
    Rect { cx: f32, cy: f32, hx: f32, hy: f32, cos: f32, sin: f32 },
    Stripes { cx: f32, cy: f32, r: f32, kx: f32, ky: f32 },
}

impl Shape {
    /// Coverage in `{0, 1}`, or a stripe modulation for stripe patches.
    fn cover(&self, x: f32, y: f32) -> Option<f32> {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                ((u / rx).powi(2) + (v / ry).powi(2) <= 1.0).then_some(1.0)
            }
            Shape::Rect { cx, cy, hx, hy, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                (u.abs() <= hx && v.abs() <= hy).then_some(1.0)
            }
            Shape::Stripes { cx, cy, r, kx, ky } => {
                let (dx, dy) = (x - cx, y - cy);
                (dx * dx + dy * dy <= r * r).then(|| 0.5 + 0.5 * (dx * kx + dy * ky).sin().signum())
            }
        }
    }
}

/// A `width x height` RGB image, a pure function of `seed`.
pub fn procedural_image(seed: u64, width: usize, height: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<ValueNoise> = (0..3).map(|_| ValueNoise::new(&mut rng, 3)).collect();
    let mid = ValueNoise::new(&mut rng, 12);
    let fine = ValueNoise::new(&mut rng, 48);
    let scale = width.max(height) as f32;
    let n_shapes = rng.gen_range(40..80);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let cx = rng.gen_range(0.0..width as f32);
        let cy = rng.gen_range(0.0..height as f32);
        let size = scale * rng.gen_range(0.02f32..0.18).powf(1.3) * 2.0;
        let ang: f32 = rng.gen_range(0.0..std::f32::consts::PI);
        let shape = match rng.gen_range(0..10) {
            0..=4 => Shape::Ellipse {
                cx,
                cy,
                rx: size,
                ry: size * rng.gen_range(0.3..1.0),
                cos: ang.cos(),
                sin: ang.sin(),
            },
            5..=8 => Shape::Rect {
                cx,
                cy,
                hx: size,
                hy: size * rng.gen_range(0.2..1.0),
                cos: ang.cos(),
                sin: ang.sin(),
            },
            _ => {
                let period = rng.gen_range(4.0f32..14.0);
                let k = std::f32::consts::TAU / period;
                Shape::Stripes {
                    cx,
                    cy,
                    r: size * 1.5,
                    kx: k * ang.cos(),
                    ky: k * ang.sin(),
                }
            }
        };
        let color = [rng.gen::<f32>(), rng.gen::<f32>(), rng.gen::<f32>()];
        let alpha = rng.gen_range(0.5f32..1.0);
        shapes.push((shape, color, alpha));
    }
    let fine_amp = rng.gen_range(0.03f32..0.1);
    let mut data = vec![0.0f32; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let (u, v) = (x as f32 / (width as f32 - 1.0), y as f32 / (height as f32 - 1.0));
            let m = mid.at(u, v) - 0.5;
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = 0.25 + 0.5 * base[c].at(u, v) + 0.3 * m;
            }
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            for (shape, color, alpha) in &shapes {
                if let Some(cov) = shape.cover(fx, fy) {
                    for c in 0..3 {
                        let target = color[c] * cov + px[c] * (1.0 - cov);
                        px[c] = px[c] * (1.0 - alpha) + target * alpha;
                    }
                }
            }
            let f = (fine.at(u, v) - 0.5) * 2.0 * fine_amp;
            for c in 0..3 {
                data[(y * width + x) * 3 + c] = (px[c] + f).clamp(0.0, 1.0);
            }
        }
    }
    ImageBuffer::new(width, height, 3, data).expect("sizes match")
}
