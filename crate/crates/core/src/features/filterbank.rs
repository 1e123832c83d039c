use std::sync::OnceLock;

use super::FeatureMap;
use crate::imaging::ImageBuffer;

pub(crate) const CHANNELS: usize = 5;
/// Kernel half-width; outputs closer than this to the border see clamped
/// pixels.
pub(crate) const RADIUS: usize = 3;
const SIZE: usize = 2 * RADIUS + 1;

type Kernel = [f64; SIZE * SIZE];

/// Zero-mean, unit-energy kernels: local contrast, x/y derivative of a
/// Gaussian, and two even Gabor filters along the diagonals.
fn kernels() -> &'static [Kernel; CHANNELS] {
    static K: OnceLock<[Kernel; CHANNELS]> = OnceLock::new();
    K.get_or_init(|| {
        let r = RADIUS as f64;
        let build = |f: &dyn Fn(f64, f64) -> f64| -> Kernel {
            let mut k = [0.0; SIZE * SIZE];
            for (i, v) in k.iter_mut().enumerate() {
                let x = (i % SIZE) as f64 - r;
                let y = (i / SIZE) as f64 - r;
                *v = f(x, y);
            }
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            k.iter_mut().for_each(|v| *v -= mean);
            let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            k.iter_mut().for_each(|v| *v /= norm);
            k
        };
        let g = |x: f64, y: f64, s: f64| (-(x * x + y * y) / (2.0 * s * s)).exp();
        let lambda = 4.0;
        let w = std::f64::consts::TAU / lambda / std::f64::consts::SQRT_2;
        [
            build(&|x, y| if x == 0.0 && y == 0.0 { 1.0 } else { 0.0 }),
            build(&|x, y| x * g(x, y, 1.0)),
            build(&|x, y| y * g(x, y, 1.0)),
            build(&|x, y| g(x, y, 1.5) * ((x + y) * w).cos()),
            build(&|x, y| g(x, y, 1.5) * ((x - y) * w).cos()),
        ]
    })
}

/// Filter-bank features of a gray image, clamp-to-edge borders, each pixel
/// vector scaled to unit length (all-zero responses stay zero).
pub fn filter_bank(gray: &ImageBuffer) -> FeatureMap {
    let (w, h) = (gray.width(), gray.height());
    let img: Vec<f64> = gray.data().iter().map(|&v| v as f64).collect();
    let ks = kernels();
    let mut data = vec![0.0; w * h * CHANNELS];
    let r = RADIUS as isize;
    let mut patch = [0.0; SIZE * SIZE];
    for y in 0..h {
        for x in 0..w {
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    patch[((dy + r) as usize) * SIZE + (dx + r) as usize] = img[yy * w + xx];
                }
            }
            let out = &mut data[(y * w + x) * CHANNELS..(y * w + x + 1) * CHANNELS];
            for (o, k) in out.iter_mut().zip(ks) {
                *o = k.iter().zip(&patch).map(|(a, b)| a * b).sum();
            }
            let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-9 {
                out.iter_mut().for_each(|v| *v /= n);
            } else {
                out.fill(0.0);
            }
        }
    }
    FeatureMap {
        width: w,
        height: h,
        channels: CHANNELS,
        data,
        normalized: true,
    }
}
