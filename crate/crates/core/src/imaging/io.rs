use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use super::{ImageBuffer, VisibilityMask};
use crate::error::Result;

/// Loads an 8/16-bit PNG or PNM file. Gray inputs stay single-channel;
/// anything with color becomes RGB (alpha dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let img = image::open(path.as_ref())?;
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let g = img.to_luma8();
        let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        ImageBuffer::new(g.width() as usize, g.height() as usize, 1, data)
    } else {
        let rgb = img.to_rgb8();
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        ImageBuffer::new(rgb.width() as usize, rgb.height() as usize, 3, data)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves as 8-bit; the format follows the extension (`.png`, `.pgm`, `.ppm`).
pub fn save_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    if img.channels() == 1 {
        let buf = GrayImage::from_raw(w, h, raw).expect("buffer size checked at construction");
        buf.save(path.as_ref())?;
    } else {
        let buf = RgbImage::from_raw(w, h, raw).expect("buffer size checked at construction");
        buf.save(path.as_ref())?;
    }
    Ok(())
}

/// Writes the binary view of a mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask_png(path: impl AsRef<Path>, mask: &VisibilityMask) -> Result<()> {
    let raw = mask
        .values
        .iter()
        .map(|&v| if v >= 0.5 { 255u8 } else { 0u8 })
        .collect();
    let buf = GrayImage::from_raw(mask.width as u32, mask.height as u32, raw)
        .expect("mask size matches dimensions");
    buf.save(path.as_ref())?;
    Ok(())
}

pub fn load_mask_png(path: impl AsRef<Path>) -> Result<VisibilityMask> {
    let g = image::open(path.as_ref())?.to_luma8();
    Ok(VisibilityMask {
        width: g.width() as usize,
        height: g.height() as usize,
        values: g.as_raw().iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect(),
    })
}
