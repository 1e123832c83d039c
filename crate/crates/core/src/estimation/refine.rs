//! Feature-metric refinement: Gauss-Newton on the four corner displacements
//! with the efficient second-order Jacobian (mean of both gradients).

use nalgebra::{SMatrix, SVector};

use super::{IncrementEstimate, VisibilityMask};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{four_point_to_homography, FourPointDisplacement, Homography};

const ITERATIONS: usize = 5;
const DAMPING: f64 = 1e-4;
const MIN_VALID_FRACTION: f64 = 0.25;

/// Mean squared feature difference `|f_t(W x) - f_r(x)|^2` over reference
/// pixels whose image falls inside `f_t`, weighted by `mask` if given.
/// Infinite when too little of the template overlaps.
pub fn refine_cost(
    f_r: &FeatureMap,
    f_t: &FeatureMap,
    warp: &Homography,
    mask: Option<&VisibilityMask>,
) -> Result<f64> {
    check(f_r, f_t, mask)?;
    let (g, valid) = sample_warped(f_t, warp, f_r.width, f_r.height);
    Ok(cost(f_r, &g, &valid, mask))
}

/// Refines the reference-to-tracked increment starting from identity.
pub fn refine(
    f_r: &FeatureMap,
    f_t: &FeatureMap,
    mask: Option<&VisibilityMask>,
) -> Result<IncrementEstimate> {
    check(f_r, f_t, mask)?;
    let (w, h) = (f_r.width, f_r.height);
    let mut d = FourPointDisplacement::zero();
    let (mut g, mut valid) = sample_warped(f_t, &Homography::IDENTITY, w, h);
    let mut c = cost(f_r, &g, &valid, mask);
    for _ in 0..ITERATIONS {
        if !c.is_finite() {
            break;
        }
        let step = match gn_step(f_r, &g, &valid, mask) {
            Some(s) => s,
            None => break,
        };
        let mut a = d.to_array();
        for (v, s) in a.iter_mut().zip(step.iter()) {
            *v += s;
        }
        let cand = FourPointDisplacement::from_array(a);
        let hw = match four_point_to_homography(&cand, w, h) {
            Ok(hw) => hw,
            Err(_) => break,
        };
        let (g2, v2) = sample_warped(f_t, &hw, w, h);
        let c2 = cost(f_r, &g2, &v2, mask);
        if !(c2 < c) {
            break;
        }
        d = cand;
        g = g2;
        valid = v2;
        let done = step.amax() < 1e-3;
        c = c2;
        if done {
            break;
        }
    }
    let vis = match mask {
        Some(m) => m.clone(),
        None => VisibilityMask::filled(w, h, 1.0),
    };
    Ok(IncrementEstimate {
        disp: d,
        vis,
        inlier_rms: if c.is_finite() { c.sqrt() } else { f64::INFINITY },
    })
}

fn check(f_r: &FeatureMap, f_t: &FeatureMap, mask: Option<&VisibilityMask>) -> Result<()> {
    if !f_r.same_shape(f_t) {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{}x{} vs {}x{}x{}",
            f_r.width, f_r.height, f_r.channels, f_t.width, f_t.height, f_t.channels
        )));
    }
    if f_r.width < 3 || f_r.height < 3 {
        return Err(Error::ShapeMismatch("feature map smaller than 3x3".into()));
    }
    if let Some(m) = mask {
        if m.width != f_r.width || m.height != f_r.height {
            return Err(Error::ShapeMismatch(format!(
                "mask {}x{} vs features {}x{}",
                m.width, m.height, f_r.width, f_r.height
            )));
        }
    }
    Ok(())
}

fn sample_warped(f: &FeatureMap, warp: &Homography, w: usize, h: usize) -> (FeatureMap, Vec<bool>) {
    let mut out = FeatureMap::zeros(w, h, f.channels);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Ok(p) = warp.try_apply([x as f64, y as f64]) {
                valid[y * w + x] = f.sample(p[0], p[1], out.pixel_mut(x, y));
            }
        }
    }
    (out, valid)
}

fn weight(mask: Option<&VisibilityMask>, i: usize) -> f64 {
    mask.map_or(1.0, |m| m.values[i] as f64)
}

fn cost(f_r: &FeatureMap, g: &FeatureMap, valid: &[bool], mask: Option<&VisibilityMask>) -> f64 {
    let (mut s, mut sw, mut total) = (0.0, 0.0, 0.0);
    for (i, &v) in valid.iter().enumerate() {
        let wi = weight(mask, i);
        total += wi;
        if !v || wi <= 0.0 {
            continue;
        }
        let (x, y) = (i % f_r.width, i / f_r.width);
        let r: f64 = f_r
            .pixel(x, y)
            .iter()
            .zip(g.pixel(x, y))
            .map(|(a, b)| (b - a) * (b - a))
            .sum();
        s += wi * r;
        sw += wi;
    }
    if total <= 0.0 || sw < MIN_VALID_FRACTION * total {
        f64::INFINITY
    } else {
        s / sw
    }
}

fn gn_step(
    f_r: &FeatureMap,
    g: &FeatureMap,
    valid: &[bool],
    mask: Option<&VisibilityMask>,
) -> Option<SVector<f64, 8>> {
    let (w, h, nc) = (f_r.width, f_r.height, f_r.channels);
    let mut jtj = SMatrix::<f64, 8, 8>::zeros();
    let mut jtr = SVector::<f64, 8>::zeros();
    let ok = |x: usize, y: usize| valid[y * w + x];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let wi = weight(mask, i);
            if wi <= 0.0 || !ok(x, y) || !ok(x - 1, y) || !ok(x + 1, y) || !ok(x, y - 1) || !ok(x, y + 1) {
                continue;
            }
            let tx = x as f64 / (w as f64 - 1.0);
            let ty = y as f64 / (h as f64 - 1.0);
            let beta = [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), tx * ty, (1.0 - tx) * ty];
            for c in 0..nc {
                let gx = 0.25
                    * (g.pixel(x + 1, y)[c] - g.pixel(x - 1, y)[c] + f_r.pixel(x + 1, y)[c]
                        - f_r.pixel(x - 1, y)[c]);
                let gy = 0.25
                    * (g.pixel(x, y + 1)[c] - g.pixel(x, y - 1)[c] + f_r.pixel(x, y + 1)[c]
                        - f_r.pixel(x, y - 1)[c]);
                let r = g.pixel(x, y)[c] - f_r.pixel(x, y)[c];
                let mut j = SVector::<f64, 8>::zeros();
                for k in 0..4 {
                    j[2 * k] = gx * beta[k];
                    j[2 * k + 1] = gy * beta[k];
                }
                jtj += j * j.transpose() * wi;
                jtr += j * (r * wi);
            }
        }
    }
    let scale = jtj.trace() / 8.0;
    if !(scale > 0.0) {
        return None;
    }
    for k in 0..8 {
        jtj[(k, k)] += DAMPING * scale;
    }
    let step = jtj.cholesky()?.solve(&-jtr);
    step.iter().all(|v| v.is_finite()).then_some(step)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth_map(w: usize, h: usize, warp: &Homography) -> FeatureMap {
        let mut f = FeatureMap::zeros(w, h, 2);
        for y in 0..h {
            for x in 0..w {
                let p = warp.apply([x as f64, y as f64]);
                let px = f.pixel_mut(x, y);
                px[0] = (p[0] * 0.35).sin() + (p[1] * 0.22).cos();
                px[1] = (p[0] * 0.17 + p[1] * 0.29).sin();
            }
        }
        f
    }

    #[test]
    fn recovers_small_translation() {
        let (w, h) = (30, 30);
        let f_r = smooth_map(w, h, &Homography::IDENTITY);
        // f_t(x) = f_r(x - t), so f_t(x + t) = f_r(x)
        let f_t = smooth_map(w, h, &Homography::translation(-0.8, 0.5));
        let est = refine(&f_r, &f_t, None).unwrap();
        for c in est.disp.d {
            assert!((c[0] - 0.8).abs() < 0.05 && (c[1] + 0.5).abs() < 0.05, "{c:?}");
        }
        let before = refine_cost(&f_r, &f_t, &Homography::IDENTITY, None).unwrap();
        let after = refine_cost(&f_r, &f_t, &est.warp().unwrap(), None).unwrap();
        assert!(after < 0.01 * before);
    }

    #[test]
    fn identical_maps_stay_put() {
        let f = smooth_map(20, 20, &Homography::IDENTITY);
        let est = refine(&f, &f, None).unwrap();
        assert!(est.disp.max_abs() < 1e-9);
        let flat = FeatureMap::zeros(20, 20, 2);
        assert!(refine(&flat, &flat, None).unwrap().disp.max_abs() == 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = FeatureMap::zeros(20, 20, 2);
        let b = FeatureMap::zeros(20, 21, 2);
        assert!(matches!(refine(&a, &b, None), Err(Error::ShapeMismatch(_))));
        let m = VisibilityMask::filled(10, 10, 1.0);
        assert!(refine(&a, &a, Some(&m)).is_err());
    }
}
