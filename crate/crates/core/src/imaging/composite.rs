use super::{bilinear_sample, ImageBuffer, VisibilityMask};
use crate::error::Result;
use crate::geometry::Homography;

/// Pastes `overlay` onto the tracked plane in `frame`.
///
/// `h_in` is the reference normalization homography and `h_ij` maps current
/// frame pixels to reference pixels, so `h_in * h_ij` takes a frame pixel to
/// the reference template grid on which `vis` is defined. The overlay is
/// stretched over that grid. Only pixels that land inside the template and
/// are visible (nearest-neighbor lookup, `>= 0.5`) change.
pub fn composite(
    frame: &ImageBuffer,
    overlay: &ImageBuffer,
    h_in: &Homography,
    h_ij: &Homography,
    vis: &VisibilityMask,
) -> Result<ImageBuffer> {
    // Checked for invertibility so degenerate tracks surface as errors.
    h_ij.invert()?;
    let to_template = h_in.compose(h_ij);
    let overlay = overlay.with_channels(frame.channels());
    let (tw, th) = (vis.width as f64 - 1.0, vis.height as f64 - 1.0);
    let sx = (overlay.width() as f64 - 1.0) / tw.max(1.0);
    let sy = (overlay.height() as f64 - 1.0) / th.max(1.0);

    let mut out = frame.clone();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let t = to_template.apply([x as f64, y as f64]);
            if !(t[0] >= 0.0 && t[1] >= 0.0 && t[0] <= tw && t[1] <= th) {
                continue;
            }
            let vx = t[0].round() as usize;
            let vy = t[1].round() as usize;
            if vis.get(vx, vy) < 0.5 {
                continue;
            }
            for c in 0..frame.channels() {
                if let Some(v) = bilinear_sample(&overlay, c, t[0] * sx, t[1] * sy) {
                    out.set(x, y, c, v);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalization_homography, Quad};

    fn frame() -> ImageBuffer {
        ImageBuffer::from_fn(64, 48, |x, y| ((x * 7 + y * 3) % 17) as f32 / 17.0)
    }

    fn logo(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, |x, y| if (x / 4 + y / 4) % 2 == 0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn invisible_leaves_frame() {
        let f = frame();
        let vis = VisibilityMask::filled(64, 48, 0.0);
        let out = composite(&f, &logo(64, 48), &Homography::IDENTITY, &Homography::IDENTITY, &vis).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn identity_pastes_verbatim() {
        let f = frame();
        let l = logo(64, 48);
        let vis = VisibilityMask::filled(64, 48, 1.0);
        let out = composite(&f, &l, &Homography::IDENTITY, &Homography::IDENTITY, &vis).unwrap();
        assert_eq!(out, l);
    }

    #[test]
    fn mask_gates_pixels_exactly() {
        let f = frame();
        let quad = Quad::new([[8.0, 6.0], [50.0, 10.0], [55.0, 40.0], [5.0, 38.0]]).unwrap();
        let h_in = normalization_homography(&quad, 30, 30).unwrap();
        let mut vis = VisibilityMask::filled(30, 30, 1.0);
        for y in 0..30 {
            for x in 15..30 {
                vis.values[y * 30 + x] = 0.0;
            }
        }
        let l = ImageBuffer::filled(30, 30, 1, 1.0);
        let out = composite(&f, &l, &h_in, &Homography::IDENTITY, &vis).unwrap();
        for y in 0..48 {
            for x in 0..64 {
                let t = h_in.apply([x as f64, y as f64]);
                let inside = t[0] >= 0.0 && t[1] >= 0.0 && t[0] <= 29.0 && t[1] <= 29.0;
                let visible = inside && (t[0].round() as usize) < 15;
                if visible {
                    assert_eq!(out.get(x, y, 0), 1.0);
                } else {
                    assert_eq!(out.get(x, y, 0), f.get(x, y, 0));
                }
            }
        }
        // Idempotent for identical inputs.
        assert_eq!(out, composite(&f, &l, &h_in, &Homography::IDENTITY, &vis).unwrap());
    }
}
