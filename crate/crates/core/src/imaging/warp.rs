use super::{ImageBuffer, Mask};
use crate::error::Result;
use crate::geometry::Homography;

/// Bilinear sample of channel `c` at `(x, y)`; `None` outside
/// `[0, W-1] x [0, H-1]`.
#[inline]
pub fn bilinear_sample(img: &ImageBuffer, c: usize, x: f64, y: f64) -> Option<f32> {
    let w = img.width();
    let h = img.height();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (y.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let v00 = img.get(x0, y0, c) as f64;
    let v10 = img.get(x1, y0, c) as f64;
    let v01 = img.get(x0, y1, c) as f64;
    let v11 = img.get(x1, y1, c) as f64;
    let top = v00 * (1.0 - fx) + v10 * fx;
    let bottom = v01 * (1.0 - fx) + v11 * fx;
    Some((top * (1.0 - fy) + bottom * fy) as f32)
}

/// Warps `src` into a `width x height` output. `h` maps output coordinates to
/// source coordinates; pixels landing outside the source are zeroed and
/// marked invalid.
pub fn warp_bilinear(
    src: &ImageBuffer,
    h: &Homography,
    width: usize,
    height: usize,
) -> (ImageBuffer, Mask) {
    warp_supersampled(src, h, width, height, 1)
}

fn warp_supersampled(
    src: &ImageBuffer,
    h: &Homography,
    width: usize,
    height: usize,
    factor: usize,
) -> (ImageBuffer, Mask) {
    let channels = src.channels();
    let mut out = ImageBuffer::filled(width, height, channels, 0.0);
    let mut mask = Mask::filled(width, height, false);
    let offsets: Vec<f64> = (0..factor)
        .map(|i| (i as f64 + 0.5) / factor as f64 - 0.5)
        .collect();
    let mut acc = [0.0f64; 3];
    for y in 0..height {
        for x in 0..width {
            let center = h.apply([x as f64, y as f64]);
            let inside = bilinear_sample(src, 0, center[0], center[1]).is_some();
            if !inside {
                continue;
            }
            mask.data[y * width + x] = true;
            if factor == 1 {
                for c in 0..channels {
                    let v = bilinear_sample(src, c, center[0], center[1]).unwrap_or(0.0);
                    out.set(x, y, c, v);
                }
                continue;
            }
            acc[..channels].fill(0.0);
            let mut n = 0usize;
            for &oy in &offsets {
                for &ox in &offsets {
                    let p = h.apply([x as f64 + ox, y as f64 + oy]);
                    if bilinear_sample(src, 0, p[0], p[1]).is_none() {
                        continue;
                    }
                    n += 1;
                    for (c, a) in acc.iter_mut().enumerate().take(channels) {
                        *a += bilinear_sample(src, c, p[0], p[1]).unwrap_or(0.0) as f64;
                    }
                }
            }
            for (c, a) in acc.iter().enumerate().take(channels) {
                out.set(x, y, c, (a / n.max(1) as f64) as f32);
            }
        }
    }
    (out, mask)
}

/// A fixed-size sample of the planar object plus the homography that
/// produced it (frame pixels to template pixels).
#[derive(Debug, Clone)]
pub struct Template {
    pub image: ImageBuffer,
    pub valid: Mask,
    pub sampling_h: Homography,
}

impl Template {
    pub fn size(&self) -> usize {
        self.image.width()
    }
}

/// Samples the object into a `size x size` template through
/// `invert(sampling_h)`.
pub fn sample_planar_object(
    frame: &ImageBuffer,
    sampling_h: &Homography,
    size: usize,
) -> Result<Template> {
    let inv = sampling_h.invert()?;
    let (image, valid) = warp_bilinear(frame, &inv, size, size);
    Ok(Template {
        image,
        valid,
        sampling_h: *sampling_h,
    })
}

/// Like [`sample_planar_object`], averaging a `k x k` grid of bilinear taps
/// per template pixel, where `k` follows the local frame-to-template
/// decimation (capped at 4). Validity is still decided by the pixel center.
pub fn sample_planar_object_filtered(
    frame: &ImageBuffer,
    sampling_h: &Homography,
    size: usize,
) -> Result<Template> {
    let inv = sampling_h.invert()?;
    let c = (size as f64 - 1.0) / 2.0;
    let p0 = inv.apply([c, c]);
    let px = inv.apply([c + 1.0, c]);
    let py = inv.apply([c, c + 1.0]);
    let det = ((px[0] - p0[0]) * (py[1] - p0[1]) - (px[1] - p0[1]) * (py[0] - p0[0])).abs();
    let factor = (det.sqrt().round() as usize).clamp(1, 4);
    let (image, valid) = warp_supersampled(frame, &inv, size, size, factor);
    Ok(Template {
        image,
        valid,
        sampling_h: *sampling_h,
    })
}

/// Scale factor from the full-resolution template to a pyramid level.
pub fn level_scale(level_size: usize, full_size: usize) -> f64 {
    (level_size as f64 - 1.0) / (full_size as f64 - 1.0)
}

/// Templates at every pyramid level, coarsest first.
#[derive(Debug, Clone)]
pub struct TemplatePyramid {
    pub levels: Vec<Template>,
}

/// Samples each level directly from the frame. `sampling_h` is the
/// full-resolution normalization homography for a `full_size` template.
pub fn build_template_pyramid(
    frame: &ImageBuffer,
    sampling_h: &Homography,
    sizes: &[usize],
    full_size: usize,
) -> Result<TemplatePyramid> {
    let levels = sizes
        .iter()
        .map(|&s| {
            let k = level_scale(s, full_size);
            let h = Homography::scaling(k, k).compose(sampling_h);
            sample_planar_object_filtered(frame, &h, s)
        })
        .collect::<Result<_>>()?;
    Ok(TemplatePyramid { levels })
}

/// Area-aware resize to `width x height` (pixel-center aligned corners).
pub fn resize(img: &ImageBuffer, width: usize, height: usize) -> ImageBuffer {
    let sx = (img.width() as f64 - 1.0) / (width as f64 - 1.0).max(1.0);
    let sy = (img.height() as f64 - 1.0) / (height as f64 - 1.0).max(1.0);
    let h = Homography::scaling(sx, sy);
    let factor = (sx.max(sy).round() as usize).clamp(1, 4);
    warp_supersampled(img, &h, width, height, factor).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalization_homography, Quad};

    fn textured(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.25 * (x * 0.31).sin() * (y * 0.17).cos() + 0.2 * ((x + 2.0 * y) * 0.05).sin()
        })
    }

    fn smooth(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| {
            0.5 + 0.3 * ((x as f32) * 0.04).sin() * ((y as f32) * 0.05).cos()
        })
    }

    /// Scalar per-pixel bilinear reference, written without shared helpers.
    fn naive_bilinear(img: &ImageBuffer, x: f64, y: f64) -> Option<f64> {
        let (w, h) = (img.width() as f64, img.height() as f64);
        if x < 0.0 || y < 0.0 || x > w - 1.0 || y > h - 1.0 {
            return None;
        }
        let mut acc = 0.0;
        for yy in 0..img.height() {
            for xx in 0..img.width() {
                let wx = (1.0 - (x - xx as f64).abs()).max(0.0);
                let wy = (1.0 - (y - yy as f64).abs()).max(0.0);
                acc += wx * wy * img.get(xx, yy, 0) as f64;
            }
        }
        Some(acc)
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = textured(37, 29);
        let (out, mask) = warp_bilinear(&img, &Homography::IDENTITY, 37, 29);
        assert_eq!(out, img);
        assert_eq!(mask.count(), 37 * 29);
    }

    #[test]
    fn integer_translation_shifts() {
        let img = textured(40, 30);
        let (out, mask) = warp_bilinear(&img, &Homography::translation(2.0, 3.0), 40, 30);
        for y in 0..30 {
            for x in 0..40 {
                if x + 2 < 40 && y + 3 < 30 {
                    assert!(mask.get(x, y));
                    assert_eq!(out.get(x, y, 0), img.get(x + 2, y + 3, 0));
                } else {
                    assert!(!mask.get(x, y));
                    assert_eq!(out.get(x, y, 0), 0.0);
                }
            }
        }
    }

    #[test]
    fn half_scale_matches_naive_oracle() {
        let img = textured(24, 24);
        let h = Homography::scaling(0.5, 0.5);
        let (out, mask) = warp_bilinear(&img, &h, 30, 30);
        for y in 0..30 {
            for x in 0..30 {
                let p = h.apply([x as f64, y as f64]);
                match naive_bilinear(&img, p[0], p[1]) {
                    Some(v) => {
                        assert!(mask.get(x, y));
                        assert!((out.get(x, y, 0) as f64 - v).abs() < 1e-6);
                    }
                    None => assert!(!mask.get(x, y)),
                }
            }
        }
    }

    #[test]
    fn sampling_layer_examples() {
        let frame = textured(200, 180);
        let quad = Quad::new([[20.0, 30.0], [150.0, 25.0], [160.0, 140.0], [15.0, 150.0]]).unwrap();
        let h = normalization_homography(&quad, 120, 120).unwrap();
        let t = sample_planar_object(&frame, &h, 120).unwrap();
        assert!((t.image.get(0, 0, 0) - frame.get(20, 30, 0)).abs() < 1e-6);
        assert_eq!(t.image.width(), 120);
        // Agrees with the naive oracle through the inverse homography.
        let inv = h.invert().unwrap();
        for &(x, y) in &[(5usize, 7usize), (60, 60), (119, 3), (77, 101)] {
            let p = inv.apply([x as f64, y as f64]);
            let v = naive_bilinear(&frame, p[0], p[1]).unwrap();
            assert!((t.image.get(x, y, 0) as f64 - v).abs() < 1e-5);
        }

        let crop = Quad::axis_aligned(10.0, 20.0, 129.0, 139.0).unwrap();
        let h = normalization_homography(&crop, 120, 120).unwrap();
        let t = sample_planar_object(&frame, &h, 120).unwrap();
        for y in 0..120 {
            for x in 0..120 {
                assert!((t.image.get(x, y, 0) - frame.get(x + 10, y + 20, 0)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn validity_is_point_in_bounds() {
        let frame = textured(100, 100);
        let quad = Quad::new([[-20.0, 10.0], [90.0, -5.0], [120.0, 95.0], [5.0, 80.0]]).unwrap();
        let h = normalization_homography(&quad, 60, 60).unwrap();
        let t = sample_planar_object(&frame, &h, 60).unwrap();
        let inv = h.invert().unwrap();
        for y in 0..60 {
            for x in 0..60 {
                let p = inv.apply([x as f64, y as f64]);
                let inside = p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= 99.0 && p[1] <= 99.0;
                assert_eq!(t.valid.get(x, y), inside);
            }
        }
        let filtered = sample_planar_object_filtered(&frame, &h, 60).unwrap();
        assert_eq!(filtered.valid, t.valid);
    }

    #[test]
    fn pyramid_levels() {
        let frame = ImageBuffer::filled(240, 240, 1, 0.4);
        let quad = Quad::axis_aligned(60.0, 60.0, 179.0, 179.0).unwrap();
        let h = normalization_homography(&quad, 120, 120).unwrap();
        let pyr = build_template_pyramid(&frame, &h, &[30, 60, 120], 120).unwrap();
        let sizes: Vec<usize> = pyr.levels.iter().map(|t| t.size()).collect();
        assert_eq!(sizes, vec![30, 60, 120]);
        for t in &pyr.levels {
            assert!(t.image.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
        }
    }

    #[test]
    fn mid_level_matches_box_filtered_full_level() {
        let frame = smooth(240, 240);
        let quad = Quad::axis_aligned(60.0, 60.0, 179.0, 179.0).unwrap();
        let h = normalization_homography(&quad, 120, 120).unwrap();
        let pyr = build_template_pyramid(&frame, &h, &[30, 60, 120], 120).unwrap();
        let full = &pyr.levels[2].image;
        let mid = &pyr.levels[1].image;
        // Oracle: 2x2 box filter of the full level, then point-sample at the
        // 60x60 grid positions (bilinear on the filtered image).
        let boxed = ImageBuffer::from_fn(119, 119, |x, y| {
            0.25 * (full.get(x, y, 0) + full.get(x + 1, y, 0) + full.get(x, y + 1, 0) + full.get(x + 1, y + 1, 0))
        });
        let k = 119.0 / 59.0;
        let mut err = 0.0;
        for y in 0..60 {
            for x in 0..60 {
                let px = (x as f64 * k - 0.5).clamp(0.0, 118.0);
                let py = (y as f64 * k - 0.5).clamp(0.0, 118.0);
                let v = bilinear_sample(&boxed, 0, px, py).unwrap();
                err += (v - mid.get(x, y, 0)).abs() as f64;
            }
        }
        assert!(err / 3600.0 < 0.02, "mean abs diff {}", err / 3600.0);
    }

    #[test]
    fn warp_composition_on_smooth_image() {
        let img = smooth(120, 120);
        let h1 = Homography::from_matrix([[0.98, 0.03, 2.0], [-0.02, 1.01, 1.5], [1e-4, -5e-5, 1.0]]).unwrap();
        let h2 = Homography::from_matrix([[1.01, -0.02, -1.0], [0.01, 0.99, 0.5], [-5e-5, 1e-4, 1.0]]).unwrap();
        let (a, _) = warp_bilinear(&img, &h1, 120, 120);
        let (ab, mab) = warp_bilinear(&a, &h2, 120, 120);
        let (c, mc) = warp_bilinear(&img, &h1.compose(&h2), 120, 120);
        let mut err = 0.0;
        let mut n = 0;
        for i in 0..120 * 120 {
            if mab.data[i] && mc.data[i] {
                err += (ab.data()[i] - c.data()[i]).abs() as f64;
                n += 1;
            }
        }
        assert!(n > 10_000);
        assert!(err / n as f64 > 0.0 && err / (n as f64) < 0.02);
    }

    #[test]
    fn resize_constant() {
        let img = ImageBuffer::filled(500, 300, 3, 0.25);
        let r = resize(&img, 240, 240);
        assert_eq!((r.width(), r.height(), r.channels()), (240, 240, 3));
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
