//! Per-template feature extraction: raw intensity, a fixed filter bank and a
//! trainable encoder-decoder network, plus its optimizer and weight format.

mod adam;
mod convnet;
mod filterbank;
pub mod layers;
mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use convnet::{convnet_backward, ConvNetCache, ConvNetWeights, Topology, CONVNET_VERSION};
pub use filterbank::filter_bank;
pub use layers::Tensor3;
pub use params::{
    decode_weights, encode_weights, load_weights, save_weights, NamedTensor, ParamSet,
    FORMAT_VERSION,
};

use crate::error::{Error, Result};
use crate::imaging::{Mask, Template};

/// Dense per-pixel feature vectors, stored pixel-major (`data[(y*w+x)*c + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Whether every non-zero pixel vector has unit length.
    pub normalized: bool,
}

impl FeatureMap {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height}x{channels} feature map needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite feature value".into()));
        }
        Ok(FeatureMap {
            width,
            height,
            channels,
            data,
            normalized,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        FeatureMap {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            normalized: false,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Bilinear sample of every channel at `(x, y)`; `None` outside
    /// `[0, w-1] x [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        for k in 0..self.channels {
            let top = a[k] * (1.0 - fx) + b[k] * fx;
            let bot = c[k] * (1.0 - fx) + d[k] * fx;
            out[k] = top * (1.0 - fy) + bot * fy;
        }
        true
    }

    pub fn from_tensor(t: &Tensor3, normalized: bool) -> Self {
        let n = t.h * t.w;
        let mut data = vec![0.0; n * t.c];
        for c in 0..t.c {
            for p in 0..n {
                data[p * t.c + c] = t.data[c * n + p];
            }
        }
        FeatureMap {
            width: t.w,
            height: t.h,
            channels: t.c,
            data,
            normalized,
        }
    }

    pub fn to_tensor(&self) -> Tensor3 {
        let n = self.width * self.height;
        let mut data = vec![0.0; n * self.channels];
        for p in 0..n {
            for c in 0..self.channels {
                data[c * n + p] = self.data[p * self.channels + c];
            }
        }
        Tensor3 {
            c: self.channels,
            h: self.height,
            w: self.width,
            data,
        }
    }

    /// Zeroes the feature vectors of pixels where `mask` is false.
    pub fn apply_mask(&mut self, mask: &Mask) {
        for (p, &ok) in mask.data.iter().enumerate() {
            if !ok {
                self.data[p * self.channels..(p + 1) * self.channels].fill(0.0);
            }
        }
    }
}

/// Feature extractor choice.
#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// Gray intensity, one channel, not normalized.
    Intensity,
    /// Fixed local-contrast, gradient and oriented filters, unit length.
    FilterBank,
    ConvNet(Box<ConvNetWeights>),
}

impl Extractor {
    pub fn channels(&self) -> usize {
        match self {
            Extractor::Intensity => 1,
            Extractor::FilterBank => filterbank::CHANNELS,
            Extractor::ConvNet(w) => w.topology.features,
        }
    }
}

/// Network input: gray template standardized over its valid pixels,
/// invalid pixels set to zero.
pub fn network_input(template: &Template) -> Tensor3 {
    let gray = template.image.to_gray();
    let (w, h) = (gray.width(), gray.height());
    let valid = &template.valid.data;
    let vals: Vec<f64> = gray.data().iter().map(|&v| v as f64).collect();
    let n = valid.iter().filter(|&&v| v).count().max(1) as f64;
    let mean = vals.iter().zip(valid).filter(|(_, &ok)| ok).map(|(v, _)| v).sum::<f64>() / n;
    let var = vals
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .map(|(v, _)| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    let scale = 1.0 / (var.sqrt() + 0.02);
    let data = vals
        .iter()
        .zip(valid)
        .map(|(v, &ok)| if ok { (v - mean) * scale } else { 0.0 })
        .collect();
    Tensor3 { c: 1, h, w, data }
}

/// Feature map for a template. Pixels outside the valid region get zero
/// vectors.
pub fn extract(template: &Template, extractor: &Extractor) -> Result<FeatureMap> {
    let mut fm = match extractor {
        Extractor::Intensity => {
            let gray = template.image.to_gray();
            FeatureMap {
                width: gray.width(),
                height: gray.height(),
                channels: 1,
                data: gray.data().iter().map(|&v| v as f64).collect(),
                normalized: false,
            }
        }
        Extractor::FilterBank => filter_bank(&template.image.to_gray()),
        Extractor::ConvNet(w) => {
            w.validate()?;
            FeatureMap::from_tensor(&w.forward(&network_input(template))?, true)
        }
    };
    fm.apply_mask(&template.valid);
    Ok(fm)
}
