//! From cost volumes to homography increments and visibility: the analytic
//! and learned heads, feature-metric refinement, training losses and
//! ground-truth visibility rasterization.

mod analytic;
mod learned;
mod refine;

pub use analytic::{
    estimate_increment_analytic, estimate_increment_from_cost_volume, fit_homography_weighted,
    similarity_visibility, AnalyticConfig, VisibilityRule,
};
pub use learned::{estimate_increment_learned, HeadCache, HeadGrads, LearnedHead};
pub use refine::{refine, refine_cost};

pub use crate::imaging::VisibilityMask;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::geometry::{
    four_point_to_homography, point_in_polygon, FourPointDisplacement, Homography, Point, Quad,
};

/// Surrogate increment for one template level: `disp` is the four-point
/// form of the map from reference-template to tracked-template pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementEstimate {
    pub disp: FourPointDisplacement,
    /// Visibility on the reference-template grid.
    pub vis: VisibilityMask,
    pub inlier_rms: f64,
}

impl IncrementEstimate {
    /// Reference-to-tracked template map.
    pub fn warp(&self) -> Result<Homography> {
        four_point_to_homography(&self.disp, self.vis.width, self.vis.height)
    }

    /// `H^s`, to be left-multiplied onto the tracked normalization.
    pub fn surrogate(&self) -> Result<Homography> {
        self.warp()?.invert()
    }
}

/// Weights of the three training losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_m: f64,
    pub lambda_v: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 1.0,
            lambda_m: 1.0,
            lambda_v: 1.0,
        }
    }
}

/// `1/4 * sum_k |d_gt_k - d_pred_k|_1`.
pub fn loss_homography(d_pred: &FourPointDisplacement, d_gt: &FourPointDisplacement) -> f64 {
    d_pred
        .d
        .iter()
        .zip(&d_gt.d)
        .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
        .sum::<f64>()
        / 4.0
}

pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy of one prediction, clamped to `[eps, 1 - eps]`.
#[inline]
pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over all pixels.
pub fn loss_visibility(m_pred: &VisibilityMask, m_gt: &VisibilityMask) -> Result<f64> {
    if m_pred.width != m_gt.width || m_pred.height != m_gt.height {
        return Err(Error::ShapeMismatch(format!(
            "visibility {}x{} vs {}x{}",
            m_pred.width, m_pred.height, m_gt.width, m_gt.height
        )));
    }
    let n = m_pred.values.len().max(1) as f64;
    Ok(m_pred
        .values
        .iter()
        .zip(&m_gt.values)
        .map(|(&p, &g)| bce(p as f64, g as f64))
        .sum::<f64>()
        / n)
}

/// Bilinear warp of `f_r` onto the tracked grid: `out(x) = f_r(h_tr(x))`,
/// with a flag per pixel telling whether the sample was in bounds.
pub fn warp_features(f_r: &FeatureMap, h_tr: &Homography) -> (FeatureMap, Vec<bool>) {
    let mut out = FeatureMap::zeros(f_r.width, f_r.height, f_r.channels);
    let mut ok = vec![false; f_r.width * f_r.height];
    let mut buf = vec![0.0; f_r.channels];
    for y in 0..f_r.height {
        for x in 0..f_r.width {
            let Ok(q) = h_tr.try_apply([x as f64, y as f64]) else {
                continue;
            };
            if f_r.sample(q[0], q[1], &mut buf) {
                out.pixel_mut(x, y).copy_from_slice(&buf);
                ok[y * f_r.width + x] = true;
            }
        }
    }
    (out, ok)
}

/// Visible feature distance `1/N * sum_x m(x) |f_r(h_tr x) - f_t(x)|_1` on
/// the tracked grid. `h_tr` maps tracked-template pixels to reference-
/// template pixels; samples falling outside the reference count as zero
/// vectors.
pub fn loss_alignment(
    f_r: &FeatureMap,
    f_t: &FeatureMap,
    h_tr: &Homography,
    m_gt: &VisibilityMask,
) -> Result<f64> {
    if !f_r.same_shape(f_t) || m_gt.width != f_t.width || m_gt.height != f_t.height {
        return Err(Error::ShapeMismatch("alignment loss inputs differ in shape".into()));
    }
    h_tr.invert()?;
    let (warped, _) = warp_features(f_r, h_tr);
    let n = (f_t.width * f_t.height).max(1) as f64;
    let mut acc = 0.0;
    for (p, &m) in m_gt.values.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let c = f_t.channels;
        let a = &warped.data[p * c..(p + 1) * c];
        let b = &f_t.data[p * c..(p + 1) * c];
        acc += m as f64 * a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>();
    }
    Ok(acc / n)
}

/// Gradients of [`loss_alignment`] with respect to `f_r` and `f_t`. The
/// L1 kink is given gradient zero.
pub fn loss_alignment_backward(
    f_r: &FeatureMap,
    f_t: &FeatureMap,
    h_tr: &Homography,
    m_gt: &VisibilityMask,
) -> Result<(FeatureMap, FeatureMap)> {
    if !f_r.same_shape(f_t) || m_gt.width != f_t.width || m_gt.height != f_t.height {
        return Err(Error::ShapeMismatch("alignment loss inputs differ in shape".into()));
    }
    h_tr.invert()?;
    let (w, h, c) = (f_r.width, f_r.height, f_r.channels);
    let n = (w * h).max(1) as f64;
    let mut g_r = FeatureMap::zeros(w, h, c);
    let mut g_t = FeatureMap::zeros(w, h, c);
    let mut buf = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let m = m_gt.values[y * w + x] as f64;
            if m == 0.0 {
                continue;
            }
            let q = h_tr.try_apply([x as f64, y as f64]).ok();
            let inside = q.is_some_and(|q| f_r.sample(q[0], q[1], &mut buf));
            if !inside {
                buf.fill(0.0);
            }
            let mut s = vec![0.0; c];
            let ft = f_t.pixel(x, y);
            for k in 0..c {
                s[k] = m * sign(buf[k] - ft[k]) / n;
            }
            for (g, v) in g_t.pixel_mut(x, y).iter_mut().zip(&s) {
                *g -= v;
            }
            if let (true, Some(q)) = (inside, q) {
                let x0 = (q[0].floor() as usize).min(w.saturating_sub(2));
                let y0 = (q[1].floor() as usize).min(h.saturating_sub(2));
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (q[0] - x0 as f64, q[1] - y0 as f64);
                for (px, py, wt) in [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x1, y0, fx * (1.0 - fy)),
                    (x0, y1, (1.0 - fx) * fy),
                    (x1, y1, fx * fy),
                ] {
                    for (g, v) in g_r.pixel_mut(px, py).iter_mut().zip(&s) {
                        *g += wt * v;
                    }
                }
            }
        }
    }
    Ok((g_r, g_t))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_total(l_d: f64, l_m: f64, l_v: f64, w: &LossWeights) -> f64 {
    w.lambda_d * l_d + w.lambda_m * l_m + w.lambda_v * l_v
}

/// Ground-truth visibility on a `level x level` template grid whose pixels
/// map to frame pixels through `invert(sampling_h)`. A pixel is visible when
/// its back-projection lies inside the frame, inside the object quad and
/// outside every occluder polygon (all in frame pixels).
pub fn gt_visibility(
    quad_gt: &Quad,
    frame_size: (usize, usize),
    occluders: &[Vec<Point>],
    sampling_h: &Homography,
    level: usize,
) -> Result<VisibilityMask> {
    let inv = sampling_h.invert()?;
    let (fw, fh) = (frame_size.0 as f64 - 1.0, frame_size.1 as f64 - 1.0);
    let mut vis = VisibilityMask::filled(level, level, 0.0);
    for y in 0..level {
        for x in 0..level {
            let Ok(q) = inv.try_apply([x as f64, y as f64]) else {
                continue;
            };
            let in_frame = q[0] >= 0.0 && q[1] >= 0.0 && q[0] <= fw && q[1] <= fh;
            if in_frame
                && quad_contains_closed(quad_gt, q)
                && !occluders.iter().any(|o| point_in_polygon(o, q))
            {
                vis.values[y * level + x] = 1.0;
            }
        }
    }
    Ok(vis)
}

/// Quad containment with a small tolerance so that template-boundary pixels
/// mapping exactly onto the quad edges count as inside.
fn quad_contains_closed(q: &Quad, p: Point) -> bool {
    let c = &q.corners;
    (0..4).all(|i| {
        let a = c[i];
        let b = c[(i + 1) % 4];
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-6 * len
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalization_homography;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alignment_backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h, c) = (9, 8, 3);
        let rand_map = |rng: &mut ChaCha8Rng| {
            let mut f = FeatureMap::zeros(w, h, c);
            f.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            f
        };
        let f_r = rand_map(&mut rng);
        let f_t = rand_map(&mut rng);
        let mut m = VisibilityMask::filled(w, h, 1.0);
        m.values[5] = 0.0;
        m.values[17] = 0.3;
        let h_tr = Homography::from_matrix([[1.02, 0.03, 0.37], [-0.02, 0.98, -0.41], [0.001, 0.0, 1.0]]).unwrap();
        let (g_r, g_t) = loss_alignment_backward(&f_r, &f_t, &h_tr, &m).unwrap();
        let step = 1e-6;
        for (which, g) in [(0, &g_r), (1, &g_t)] {
            for i in (0..w * h * c).step_by(5) {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (f_r.clone(), f_t.clone());
                    if which == 0 {
                        a.data[i] += delta;
                    } else {
                        b.data[i] += delta;
                    }
                    loss_alignment(&a, &b, &h_tr, &m).unwrap()
                };
                let fd = (eval(step) - eval(-step)) / (2.0 * step);
                assert!((fd - g.data[i]).abs() < 1e-6, "{which} {i}: {fd} vs {}", g.data[i]);
            }
        }
    }

    #[test]
    fn homography_loss_examples() {
        let z = FourPointDisplacement::zero();
        assert_eq!(loss_homography(&z, &z), 0.0);
        assert_eq!(loss_homography(&FourPointDisplacement::uniform(1.0, 1.0), &z), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
            let b: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
            let mut r = 0.0;
            for i in 0..8 {
                r += (a[i] - b[i]).abs();
            }
            let l = loss_homography(
                &FourPointDisplacement::from_array(a),
                &FourPointDisplacement::from_array(b),
            );
            assert!((l - r / 4.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn homography_loss_is_a_metric(
            a in prop::array::uniform8(-20.0f64..20.0),
            b in prop::array::uniform8(-20.0f64..20.0),
            c in prop::array::uniform8(-20.0f64..20.0),
        ) {
            let (a, b, c) = (
                FourPointDisplacement::from_array(a),
                FourPointDisplacement::from_array(b),
                FourPointDisplacement::from_array(c),
            );
            prop_assert_eq!(loss_homography(&a, &a), 0.0);
            prop_assert!((loss_homography(&a, &b) - loss_homography(&b, &a)).abs() < 1e-12);
            prop_assert!(loss_homography(&a, &c) <= loss_homography(&a, &b) + loss_homography(&b, &c) + 1e-12);
        }
    }

    #[test]
    fn visibility_loss_examples() {
        let gt = VisibilityMask::filled(5, 4, 1.0);
        assert!(loss_visibility(&gt, &gt).unwrap() <= 1e-6);
        let half = VisibilityMask::filled(5, 4, 0.5);
        let mut mixed = gt.clone();
        mixed.values[3] = 0.0;
        for g in [&gt, &mixed] {
            assert!((loss_visibility(&half, g).unwrap() - 2f64.ln()).abs() < 1e-9);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = VisibilityMask {
            width: 6,
            height: 6,
            values: (0..36).map(|_| rng.gen::<f32>()).collect(),
        };
        let g = VisibilityMask {
            width: 6,
            height: 6,
            values: (0..36).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
        };
        let mut r = 0.0;
        for i in 0..36 {
            let q = (p.values[i] as f64).clamp(1e-7, 1.0 - 1e-7);
            let t = g.values[i] as f64;
            r -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        }
        assert!((loss_visibility(&p, &g).unwrap() - r / 36.0).abs() < 1e-10);
        assert!(loss_visibility(&p, &gt).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let d = LossWeights::default();
        assert_eq!(loss_total(0.0, 0.0, 0.0, &d), 0.0);
        assert_eq!(loss_total(1.0, 1.0, 1.0, &d), 3.0);
        let w = LossWeights {
            lambda_d: 2.0,
            lambda_m: 0.0,
            lambda_v: 1.0,
        };
        assert_eq!(loss_total(1.0, 5.0, 2.0, &w), 4.0);
    }

    fn textured_features(w: usize, h: usize) -> FeatureMap {
        let img = crate::imaging::ImageBuffer::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32, y as f32);
            0.5 + 0.2 * (x * 0.31).sin() * (y * 0.23).cos() + 0.15 * ((x * 0.13 + y * 0.29).sin())
        });
        crate::features::filter_bank(&img)
    }

    #[test]
    fn alignment_loss_examples() {
        let f = textured_features(40, 40);
        let all = VisibilityMask::filled(40, 40, 1.0);
        assert_eq!(loss_alignment(&f, &f, &Homography::IDENTITY, &all).unwrap(), 0.0);
        let none = VisibilityMask::filled(40, 40, 0.0);
        let g = textured_features(40, 40);
        assert_eq!(loss_alignment(&f, &g, &Homography::translation(3.0, 1.0), &none).unwrap(), 0.0);
    }

    #[test]
    fn alignment_loss_minimum_at_true_homography() {
        // f_t(x) = f_r(H x) for a known H, interior visibility only.
        let big = textured_features(80, 80);
        let size = 40;
        let h_tr = Homography::from_matrix([[1.02, 0.03, 18.0], [-0.02, 0.99, 21.0], [1e-4, 0.0, 1.0]])
            .unwrap();
        let (f_t, _) = warp_features_from(&big, &h_tr, size);
        let vis = VisibilityMask::filled(size, size, 1.0);
        let at_true = loss_alignment_from(&big, &f_t, &h_tr, &vis);
        assert!(at_true < 0.01, "{at_true}");
        for k in 0..8 {
            let ang = k as f64 * std::f64::consts::FRAC_PI_4;
            let d = FourPointDisplacement::uniform(2.0 * ang.cos(), 2.0 * ang.sin());
            let shift = four_point_to_homography(&d, size, size).unwrap();
            let perturbed = h_tr.compose(&shift);
            assert!(loss_alignment_from(&big, &f_t, &perturbed, &vis) > at_true);
            // 4 px corner shifts: the coarse landscape probe.
            let d4 = FourPointDisplacement::uniform(4.0 * ang.cos(), 4.0 * ang.sin());
            let p4 = h_tr.compose(&four_point_to_homography(&d4, size, size).unwrap());
            assert!(loss_alignment_from(&big, &f_t, &p4, &vis) > at_true);
        }
    }

    /// Same as `warp_features`/`loss_alignment` but with a reference map
    /// larger than the tracked grid.
    fn warp_features_from(f: &FeatureMap, h: &Homography, size: usize) -> (FeatureMap, usize) {
        let mut out = FeatureMap::zeros(size, size, f.channels);
        let mut buf = vec![0.0; f.channels];
        let mut n = 0;
        for y in 0..size {
            for x in 0..size {
                let q = h.apply([x as f64, y as f64]);
                if f.sample(q[0], q[1], &mut buf) {
                    out.pixel_mut(x, y).copy_from_slice(&buf);
                    n += 1;
                }
            }
        }
        (out, n)
    }

    fn loss_alignment_from(f_r: &FeatureMap, f_t: &FeatureMap, h: &Homography, m: &VisibilityMask) -> f64 {
        let (w, _) = warp_features_from(f_r, h, f_t.width);
        let mut acc = 0.0;
        for p in 0..f_t.width * f_t.height {
            let c = f_t.channels;
            acc += m.values[p] as f64
                * w.data[p * c..(p + 1) * c]
                    .iter()
                    .zip(&f_t.data[p * c..(p + 1) * c])
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
        }
        acc / (f_t.width * f_t.height) as f64
    }

    #[test]
    fn gt_visibility_cases() {
        let quad = Quad::axis_aligned(10.0, 10.0, 109.0, 109.0).unwrap();
        let h = normalization_homography(&quad, 30, 30).unwrap();
        let v = gt_visibility(&quad, (200, 150), &[], &h, 30).unwrap();
        assert!(v.values.iter().all(|&x| x == 1.0));

        let cover = vec![[-1.0, -1.0], [201.0, -1.0], [201.0, 151.0], [-1.0, 151.0]];
        let v = gt_visibility(&quad, (200, 150), &[cover], &h, 30).unwrap();
        assert!(v.values.iter().all(|&x| x == 0.0));

        // Half-plane occluder x >= 57.3, rasterized on a 60 px level.
        let k = (60.0 - 1.0) / 99.0;
        let h60 = Homography::scaling(k, k).compose(&normalization_homography(&quad, 100, 100).unwrap());
        let half = vec![[57.3, -1.0], [500.0, -1.0], [500.0, 500.0], [57.3, 500.0]];
        let v = gt_visibility(&quad, (200, 150), &[half.clone()], &h60, 60).unwrap();
        let inv = h60.invert().unwrap();
        for y in 0..60 {
            for x in 0..60 {
                let q = inv.apply([x as f64, y as f64]);
                let expect = !point_in_polygon(&half, q);
                assert_eq!(v.get(x, y) == 1.0, expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn gt_visibility_out_of_frame_and_monotone() {
        let quad = Quad::new([[-20.0, 10.0], [80.0, 5.0], [90.0, 90.0], [-10.0, 95.0]]).unwrap();
        let h = normalization_homography(&quad, 30, 30).unwrap();
        let v0 = gt_visibility(&quad, (100, 100), &[], &h, 30).unwrap();
        assert!(v0.visible_fraction() < 1.0 && v0.visible_fraction() > 0.5);
        let occ = vec![[30.0, 30.0], [60.0, 35.0], [40.0, 70.0]];
        let v1 = gt_visibility(&quad, (100, 100), &[occ], &h, 30).unwrap();
        for (a, b) in v0.values.iter().zip(&v1.values) {
            assert!(b <= a);
        }
        assert!(v1.binary().count() < v0.binary().count());
    }
}
