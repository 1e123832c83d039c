//! Local cost volumes between feature maps, their soft-argmax decoding and
//! distribution statistics.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureMap;

/// Correlations `c(x, o) = f_r(x) . f_t(x + o)` for all offsets
/// `|o|_inf <= d_max`, stored pixel-major with offsets row-major over
/// `(dy, dx)`. Offsets that leave the template hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    pub values: Vec<f64>,
}

impl CostVolume {
    pub fn channels(&self) -> usize {
        (2 * self.d_max + 1).pow(2)
    }

    /// `(dx, dy)` of channel `k`.
    #[inline]
    pub fn offset(&self, k: usize) -> (isize, isize) {
        let n = 2 * self.d_max + 1;
        let d = self.d_max as isize;
        ((k % n) as isize - d, (k / n) as isize - d)
    }

    #[inline]
    pub fn channel(&self, dx: isize, dy: isize) -> usize {
        let d = self.d_max as isize;
        ((dy + d) * (2 * d + 1) + dx + d) as usize
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        let k = self.channels();
        let i = (y * self.width + x) * k;
        &self.values[i..i + k]
    }

    /// Whether every offset at `(x, y)` stays inside the template.
    #[inline]
    pub fn is_interior(&self, x: usize, y: usize) -> bool {
        let d = self.d_max;
        x >= d && y >= d && x + d < self.width && y + d < self.height
    }

    /// Flat dump: `width, height, d_max` as little-endian u32 followed by the
    /// values as little-endian f32 (`-inf` preserved).
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(12 + 4 * self.values.len());
        for v in [self.width, self.height, self.d_max] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn build_cost_volume(f_r: &FeatureMap, f_t: &FeatureMap, d_max: usize) -> Result<CostVolume> {
    if !f_r.same_shape(f_t) {
        return Err(Error::ShapeMismatch(format!(
            "feature maps {}x{}x{} and {}x{}x{}",
            f_r.width, f_r.height, f_r.channels, f_t.width, f_t.height, f_t.channels
        )));
    }
    if d_max == 0 {
        return Err(Error::ShapeMismatch("d_max must be at least 1".into()));
    }
    let (w, h) = (f_r.width as isize, f_r.height as isize);
    let d = d_max as isize;
    let k = (2 * d_max + 1).pow(2);
    let mut values = vec![f64::NEG_INFINITY; f_r.width * f_r.height * k];
    for y in 0..h {
        for x in 0..w {
            let a = f_r.pixel(x as usize, y as usize);
            let base = ((y * w + x) as usize) * k;
            for dy in -d..=d {
                let ty = y + dy;
                if ty < 0 || ty >= h {
                    continue;
                }
                for dx in -d..=d {
                    let tx = x + dx;
                    if tx < 0 || tx >= w {
                        continue;
                    }
                    let b = f_t.pixel(tx as usize, ty as usize);
                    let c = ((dy + d) * (2 * d + 1) + dx + d) as usize;
                    values[base + c] = a.iter().zip(b).map(|(p, q)| p * q).sum();
                }
            }
        }
    }
    Ok(CostVolume {
        width: f_r.width,
        height: f_r.height,
        d_max,
        values,
    })
}

/// Gradients of `sum(grad . cv)` with respect to both feature maps. Entries
/// at `-inf` positions are ignored.
pub fn cost_volume_backward(
    f_r: &FeatureMap,
    f_t: &FeatureMap,
    d_max: usize,
    grad: &[f64],
) -> (FeatureMap, FeatureMap) {
    let (w, h) = (f_r.width as isize, f_r.height as isize);
    let d = d_max as isize;
    let k = (2 * d_max + 1).pow(2);
    let ch = f_r.channels;
    let mut g_r = FeatureMap::zeros(f_r.width, f_r.height, ch);
    let mut g_t = FeatureMap::zeros(f_r.width, f_r.height, ch);
    for y in 0..h {
        for x in 0..w {
            let base = ((y * w + x) as usize) * k;
            let a = f_r.pixel(x as usize, y as usize);
            for dy in -d..=d {
                let ty = y + dy;
                if ty < 0 || ty >= h {
                    continue;
                }
                for dx in -d..=d {
                    let tx = x + dx;
                    if tx < 0 || tx >= w {
                        continue;
                    }
                    let g = grad[base + ((dy + d) * (2 * d + 1) + dx + d) as usize];
                    if g == 0.0 {
                        continue;
                    }
                    let b = f_t.pixel(tx as usize, ty as usize);
                    let gr = g_r.pixel_mut(x as usize, y as usize);
                    for c in 0..ch {
                        gr[c] += g * b[c];
                    }
                    let gt = g_t.pixel_mut(tx as usize, ty as usize);
                    for c in 0..ch {
                        gt[c] += g * a[c];
                    }
                }
            }
        }
    }
    (g_r, g_t)
}

/// Per-pixel decoded view of a cost volume.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub d_max: usize,
    /// Softmax-weighted mean offset `(dx, dy)`.
    pub displacement: Vec<[f64; 2]>,
    /// Maximum correlation.
    pub peak: Vec<f64>,
    /// Best over best non-adjacent correlation, in `[1, 100]`.
    pub peak_ratio: Vec<f64>,
}

impl DisplacementField {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
const RATIO_FLOOR: f64 = 1e-3;
const RATIO_CAP: f64 = 100.0;

/// Softmax of `c / temperature` over the finite entries (others get 0).
pub fn softmax_into(c: &[f64], temperature: f64, out: &mut [f64]) {
    let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(c) {
        *o = if v.is_finite() {
            ((v - m) / temperature).exp()
        } else {
            0.0
        };
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Half-width of the decoding window around the best offset.
pub const DECODE_RADIUS: isize = 2;

/// Channel of the maximum correlation; exact ties go to the offset closest
/// to zero.
fn best_channel(cv: &CostVolume, c: &[f64]) -> usize {
    let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut bk = 0;
    let mut bd = isize::MAX;
    for (k, &v) in c.iter().enumerate() {
        if v == m {
            let (ox, oy) = cv.offset(k);
            let d = ox * ox + oy * oy;
            if d < bd {
                bd = d;
                bk = k;
            }
        }
    }
    bk
}

/// Softmax of `c / temperature` over the finite channels within
/// [`DECODE_RADIUS`] of the best offset; all other channels get 0.
pub fn windowed_softmax_into(cv: &CostVolume, c: &[f64], temperature: f64, out: &mut [f64]) {
    let bk = best_channel(cv, c);
    let m = c[bk];
    let (bx, by) = cv.offset(bk);
    let mut s = 0.0;
    for (k, (o, &v)) in out.iter_mut().zip(c).enumerate() {
        let (ox, oy) = cv.offset(k);
        *o = if v.is_finite() && (ox - bx).abs().max((oy - by).abs()) <= DECODE_RADIUS {
            ((v - m) / temperature).exp()
        } else {
            0.0
        };
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

/// Peak correlation and the peak ratio at one pixel.
fn peak_and_ratio(cv: &CostVolume, c: &[f64]) -> (f64, f64) {
    let bk = best_channel(cv, c);
    let best = c[bk];
    let (bx, by) = cv.offset(bk);
    let mut second = f64::NEG_INFINITY;
    for (k, &v) in c.iter().enumerate() {
        let (ox, oy) = cv.offset(k);
        if (ox - bx).abs().max((oy - by).abs()) >= 2 && v > second {
            second = v;
        }
    }
    let ratio = if best <= 0.0 {
        1.0
    } else {
        (best / second.max(RATIO_FLOOR)).clamp(1.0, RATIO_CAP)
    };
    (best, ratio)
}

/// Decodes each pixel as the softmax-weighted mean offset over a window
/// around its best offset, plus peak score and peak ratio.
pub fn soft_argmax_decode(cv: &CostVolume, temperature: f64) -> DisplacementField {
    let n = cv.width * cv.height;
    let k = cv.channels();
    let mut displacement = Vec::with_capacity(n);
    let mut peak = Vec::with_capacity(n);
    let mut peak_ratio = Vec::with_capacity(n);
    let mut p = vec![0.0; k];
    for y in 0..cv.height {
        for x in 0..cv.width {
            let c = cv.at(x, y);
            windowed_softmax_into(cv, c, temperature, &mut p);
            let mut u = [0.0, 0.0];
            for (j, &pj) in p.iter().enumerate() {
                if pj != 0.0 {
                    let (ox, oy) = cv.offset(j);
                    u[0] += pj * ox as f64;
                    u[1] += pj * oy as f64;
                }
            }
            let (b, r) = peak_and_ratio(cv, c);
            displacement.push(u);
            peak.push(b);
            peak_ratio.push(r);
        }
    }
    DisplacementField {
        width: cv.width,
        height: cv.height,
        d_max: cv.d_max,
        displacement,
        peak,
        peak_ratio,
    }
}

/// Values per pyramid level in [`cost_volume_statistics`].
pub const STATS_PER_LEVEL: usize = 5;

/// Per level, over interior pixels: mean peak, max peak, mean softmax
/// entropy, mean peak ratio, fraction of pixels with entropy above half the
/// maximum `ln K`. Levels are concatenated in the given order.
pub fn cost_volume_statistics(cvs: &[CostVolume], temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(STATS_PER_LEVEL * cvs.len());
    for cv in cvs {
        let k = cv.channels();
        let high = 0.5 * (k as f64).ln();
        let mut p = vec![0.0; k];
        let (mut n, mut sum_peak, mut max_peak, mut sum_h, mut sum_ratio, mut n_high) =
            (0usize, 0.0, f64::NEG_INFINITY, 0.0, 0.0, 0usize);
        for y in 0..cv.height {
            for x in 0..cv.width {
                if !cv.is_interior(x, y) {
                    continue;
                }
                let c = cv.at(x, y);
                softmax_into(c, temperature, &mut p);
                let ent: f64 = -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
                let (b, r) = peak_and_ratio(cv, c);
                n += 1;
                sum_peak += b;
                max_peak = max_peak.max(b);
                sum_h += ent;
                sum_ratio += r;
                if ent > high {
                    n_high += 1;
                }
            }
        }
        if n == 0 {
            out.extend([0.0; STATS_PER_LEVEL]);
            continue;
        }
        let nf = n as f64;
        out.extend([sum_peak / nf, max_peak, sum_h / nf, sum_ratio / nf, n_high as f64 / nf]);
    }
    out
}
