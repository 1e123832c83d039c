//! Image buffers, warping, the planar-object sampling layer and
//! photometric helpers.

mod augment;
mod composite;
mod io;
mod warp;

pub use augment::{gaussian_blur, photometric_augment, PhotometricParams, PhotometricRanges};
pub use composite::composite;
pub use io::{load_image, save_image, save_mask_png, load_mask_png};
pub use warp::{
    bilinear_sample, build_template_pyramid, level_scale, resize, sample_planar_object,
    sample_planar_object_filtered, warp_bilinear, Template, TemplatePyramid,
};

use crate::error::{Error, Result};

/// Row-major, channel-interleaved image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if width * height * channels != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite sample".into()));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        ImageBuffer {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        ImageBuffer {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Rec. 601 luma; single-channel images are returned as-is.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Replicates a gray image to three channels.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn with_channels(&self, channels: usize) -> ImageBuffer {
        if channels == 1 {
            self.to_gray()
        } else {
            self.to_rgb()
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Per-pixel boolean mask (geometric validity of a sampled template).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }
}

/// Per-pixel visibility probability on a template grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl VisibilityMask {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        VisibilityMask {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        VisibilityMask {
            width: mask.width,
            height: mask.height,
            values: mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Binary view at the 0.5 threshold.
    pub fn binary(&self) -> Mask {
        self.threshold(0.5)
    }

    pub fn threshold(&self, t: f32) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.values.iter().map(|&v| v >= t).collect(),
        }
    }

    pub fn visible_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.binary().count() as f64 / self.values.len() as f64
    }

    /// Intersection-over-union of the binary views.
    pub fn iou(&self, other: &VisibilityMask) -> f64 {
        let a = self.binary();
        let b = other.binary();
        let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
        let union = a.data.iter().zip(&b.data).filter(|(x, y)| **x || **y).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}
