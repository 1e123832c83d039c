use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageBuffer;

/// Photometric perturbation applied to a whole image. Neutral values are
/// `brightness = 0`, `contrast = 1`, `saturation = 1`, `blur_sigma = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotometricParams {
    /// Additive offset.
    pub brightness: f32,
    /// Gain around the mean luma.
    pub contrast: f32,
    /// Blend factor between luma and color (no-op on gray images).
    pub saturation: f32,
    pub blur_sigma: f32,
}

impl PhotometricParams {
    pub const NEUTRAL: PhotometricParams = PhotometricParams {
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
        blur_sigma: 0.0,
    };
}

impl Default for PhotometricParams {
    fn default() -> Self {
        Self::NEUTRAL
    }
}

/// Sampling ranges for [`PhotometricParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotometricRanges {
    pub brightness: (f32, f32),
    pub contrast: (f32, f32),
    pub saturation: (f32, f32),
    pub blur_sigma: (f32, f32),
}

impl PhotometricRanges {
    pub const NONE: PhotometricRanges = PhotometricRanges {
        brightness: (0.0, 0.0),
        contrast: (1.0, 1.0),
        saturation: (1.0, 1.0),
        blur_sigma: (0.0, 0.0),
    };

    pub fn sample<R: Rng>(&self, rng: &mut R) -> PhotometricParams {
        fn draw<R: Rng>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        }
        PhotometricParams {
            brightness: draw(rng, self.brightness),
            contrast: draw(rng, self.contrast),
            saturation: draw(rng, self.saturation),
            blur_sigma: draw(rng, self.blur_sigma),
        }
    }
}

impl Default for PhotometricRanges {
    fn default() -> Self {
        PhotometricRanges {
            brightness: (-0.15, 0.15),
            contrast: (0.7, 1.3),
            saturation: (0.6, 1.4),
            blur_sigma: (0.0, 1.2),
        }
    }
}

/// Applies brightness, contrast, saturation and blur in that order, then
/// clamps to `[0, 1]`. Neutral components are skipped entirely.
pub fn photometric_augment(img: &ImageBuffer, params: &PhotometricParams) -> ImageBuffer {
    let mut out = img.clone();
    if params.brightness != 0.0 {
        for v in out.data_mut() {
            *v += params.brightness;
        }
    }
    if params.contrast != 1.0 {
        let mean = out.to_gray().mean() as f32;
        for v in out.data_mut() {
            *v = mean + (*v - mean) * params.contrast;
        }
    }
    if params.saturation != 1.0 && out.channels() == 3 {
        for p in out.data_mut().chunks_exact_mut(3) {
            let g = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            for v in p {
                *v = g + (*v - g) * params.saturation;
            }
        }
    }
    if params.blur_sigma > 0.0 {
        out = gaussian_blur(&out, params.blur_sigma as f64);
    }
    if *params != PhotometricParams::NEUTRAL {
        out.clamp01();
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with clamp-to-edge borders, radius `ceil(3 sigma)`.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0f64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = clamp(x as isize + i as isize - r, w);
                    acc += kv * img.get(xx, y, c) as f64;
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = ImageBuffer::filled(w, h, ch, 0.0);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = clamp(y as isize + i as isize - r, h);
                    acc += kv * tmp[(yy * w + x) * ch + c];
                }
                out.set(x, y, c, acc as f32);
            }
        }
    }
    out
}
