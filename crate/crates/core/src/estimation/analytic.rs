use nalgebra::{Matrix3, SMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{IncrementEstimate, VisibilityMask};
use crate::correlation::{soft_argmax_decode, CostVolume, DisplacementField};
use crate::error::{Error, Result};
use crate::geometry::{
    homography_to_four_point, solve_homography, template_corners, Homography, Point, Quad,
};
use crate::imaging::Mask;

/// Tunables of the analytic head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticConfig {
    pub irls_rounds: usize,
    /// Tukey constant in units of the robust residual scale.
    pub tukey_c: f64,
    /// Lower bound on the Tukey cutoff in pixels.
    pub min_cutoff: f64,
    pub residual_gate: f64,
    pub ratio_gate: f64,
    pub min_support: usize,
    /// Rule used by [`estimate_increment_from_cost_volume`].
    pub visibility: VisibilityRule,
    pub similarity_gate: f64,
}

/// How the analytic head decides visibility when the cost volume is at hand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityRule {
    /// Residual below `residual_gate` and peak ratio above `ratio_gate`.
    ResidualRatio,
    /// Correlation at the fitted displacement above `similarity_gate`.
    Similarity,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        AnalyticConfig {
            irls_rounds: 5,
            tukey_c: 4.685,
            min_cutoff: 1.0,
            residual_gate: 1.5,
            ratio_gate: 1.2,
            min_support: 12,
            visibility: VisibilityRule::Similarity,
            similarity_gate: 0.5,
        }
    }
}

/// Similarity taking the weighted centroid to the origin and the weighted
/// mean distance to sqrt(2).
fn hartley(points: &[Point], w: &[f64]) -> Matrix3<f64> {
    let sw: f64 = w.iter().sum();
    let (mut cx, mut cy) = (0.0, 0.0);
    for (p, &wi) in points.iter().zip(w) {
        cx += wi * p[0];
        cy += wi * p[1];
    }
    cx /= sw;
    cy /= sw;
    let mut d = 0.0;
    for (p, &wi) in points.iter().zip(w) {
        d += wi * ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
    }
    d /= sw;
    let s = if d > 1e-12 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Weighted direct linear transform: minimizes the weighted algebraic error
/// of `dst ~ H src` after Hartley normalization of both point sets.
pub fn fit_homography_weighted(src: &[Point], dst: &[Point], w: &[f64]) -> Result<Homography> {
    if src.len() != dst.len() || src.len() != w.len() {
        return Err(Error::LengthMismatch {
            left: src.len(),
            right: dst.len().min(w.len()),
        });
    }
    let ts = hartley(src, w);
    let td = hartley(dst, w);
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for ((p, q), &wi) in src.iter().zip(dst).zip(w) {
        if wi <= 0.0 {
            continue;
        }
        let x = ts[(0, 0)] * p[0] + ts[(0, 2)];
        let y = ts[(1, 1)] * p[1] + ts[(1, 2)];
        let u = td[(0, 0)] * q[0] + td[(0, 2)];
        let v = td[(1, 1)] * q[1] + td[(1, 2)];
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for i in 0..9 {
            for j in i..9 {
                a[(i, j)] += wi * (r1[i] * r1[j] + r2[i] * r2[j]);
            }
        }
    }
    for i in 0..9 {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(a);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::Singular(td.determinant()))?;
    let m = td_inv * hn * ts;
    Homography::from_matrix([
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ])
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

const LMEDS_SAMPLES: usize = 100;
const LMEDS_EVAL: usize = 1500;

fn median_sq_residual(h: &Homography, src: &[Point], dst: &[Point], idx: &[usize]) -> f64 {
    let mut r: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let p = h.apply(src[i]);
            (p[0] - dst[i][0]).powi(2) + (p[1] - dst[i][1]).powi(2)
        })
        .collect();
    let m = median(&mut r);
    if m.is_finite() {
        m
    } else {
        f64::INFINITY
    }
}

/// Least-median-of-squares search over minimal samples drawn one per
/// spatial quadrant, with a fixed seed.
fn lmeds_init(src: &[Point], dst: &[Point], cand: &[usize], eval: &[usize]) -> Option<(Homography, f64)> {
    use rand::{Rng, SeedableRng};
    let mut xs: Vec<f64> = cand.iter().map(|&i| src[i][0]).collect();
    let mut ys: Vec<f64> = cand.iter().map(|&i| src[i][1]).collect();
    let (mx, my) = (median(&mut xs), median(&mut ys));
    let mut quads: [Vec<usize>; 4] = Default::default();
    for &i in cand {
        let (right, below) = (src[i][0] >= mx, src[i][1] >= my);
        let q = match (right, below) {
            (false, false) => 0,
            (true, false) => 1,
            (true, true) => 2,
            (false, true) => 3,
        };
        quads[q].push(i);
    }
    if quads.iter().any(Vec::is_empty) {
        return None;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
    let mut best: Option<(Homography, f64)> = None;
    for _ in 0..LMEDS_SAMPLES {
        let pick: [usize; 4] = std::array::from_fn(|q| quads[q][rng.gen_range(0..quads[q].len())]);
        let s4 = pick.map(|i| src[i]);
        let d4 = pick.map(|i| dst[i]);
        let Ok(h) = solve_homography(&s4, &d4) else {
            continue;
        };
        let score = median_sq_residual(&h, src, dst, eval);
        if best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((h, score));
        }
    }
    best
}

/// Tukey-weighted IRLS starting from the better (by median residual) of the
/// plain weighted fit and a least-median-of-squares fit. Returns the
/// final homography and per-point weights.
pub(crate) fn robust_fit(
    src: &[Point],
    dst: &[Point],
    base: &[f64],
    cfg: &AnalyticConfig,
) -> Result<(Homography, Vec<f64>)> {
    let n = src.len();
    let mut weights = base.to_vec();
    let mut hom = fit_homography_weighted(src, dst, &weights)?;
    let cand: Vec<usize> = (0..n).filter(|&i| base[i] > 0.1).collect();
    let stride = (cand.len() / LMEDS_EVAL).max(1);
    let eval: Vec<usize> = cand.iter().step_by(stride).copied().collect();
    if let Some((h, score)) = lmeds_init(src, dst, &cand, &eval) {
        if score < median_sq_residual(&hom, src, dst, &eval) {
            hom = h;
        }
    }
    let mut resid = vec![0.0; n];
    let mut scratch = Vec::with_capacity(n);
    for _ in 0..cfg.irls_rounds {
        scratch.clear();
        for i in 0..n {
            let p = hom.apply(src[i]);
            resid[i] = ((p[0] - dst[i][0]).powi(2) + (p[1] - dst[i][1]).powi(2)).sqrt();
            if base[i] > 0.1 {
                scratch.push(resid[i]);
            }
        }
        let sigma = 1.4826 * median(&mut scratch);
        let c = (cfg.tukey_c * sigma).max(cfg.min_cutoff);
        let mut next = vec![0.0; n];
        for i in 0..n {
            let t = resid[i] / c;
            if t < 1.0 {
                next[i] = base[i] * (1.0 - t * t).powi(2);
            }
        }
        if next.iter().filter(|&&v| v > 0.0).count() < cfg.min_support {
            break;
        }
        weights = next;
        hom = fit_homography_weighted(src, dst, &weights)?;
    }
    Ok((hom, weights))
}

/// Robust homography fit to the decoded per-pixel correspondences
/// `x -> x + u(x)`.
pub fn estimate_increment_analytic(
    field: &DisplacementField,
    vis_prior: &Mask,
    cfg: &AnalyticConfig,
) -> Result<IncrementEstimate> {
    let (w, h) = (field.width, field.height);
    if vis_prior.width != w || vis_prior.height != h {
        return Err(Error::ShapeMismatch(format!(
            "visibility prior {}x{} vs field {w}x{h}",
            vis_prior.width, vis_prior.height
        )));
    }
    let n = w * h;
    let mut src = Vec::with_capacity(n);
    let mut dst = Vec::with_capacity(n);
    let mut base = Vec::with_capacity(n);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let u = field.displacement[i];
            src.push([x as f64, y as f64]);
            dst.push([x as f64 + u[0], y as f64 + u[1]]);
            let prior = if vis_prior.data[i] { 1.0 } else { 0.0 };
            base.push(field.peak[i].max(0.0) * prior);
        }
    }
    let supported = base.iter().filter(|&&v| v > 0.1).count();
    if supported < cfg.min_support {
        return Err(Error::InsufficientSupport {
            supported,
            required: cfg.min_support,
        });
    }

    let (hom, weights) = robust_fit(&src, &dst, &base, cfg)?;

    let mut vis = VisibilityMask::filled(w, h, 0.0);
    let (mut ss, mut sw) = (0.0, 0.0);
    for i in 0..n {
        let p = hom.apply(src[i]);
        let r = ((p[0] - dst[i][0]).powi(2) + (p[1] - dst[i][1]).powi(2)).sqrt();
        if vis_prior.data[i] && r < cfg.residual_gate && field.peak_ratio[i] > cfg.ratio_gate {
            vis.values[i] = 1.0;
        }
        ss += weights[i] * r * r;
        sw += weights[i];
    }
    let corners = template_corners(w, h);
    let mapped: Vec<Point> = corners.iter().map(|&c| hom.try_apply(c)).collect::<Result<_>>()?;
    Quad::new([mapped[0], mapped[1], mapped[2], mapped[3]])?;
    Ok(IncrementEstimate {
        disp: homography_to_four_point(&hom, w, h)?,
        vis,
        inlier_rms: if sw > 0.0 { (ss / sw).sqrt() } else { 0.0 },
    })
}

/// Visibility from the correlation `c(x, H(x) - x)`, bilinear over the
/// integer offsets. Displacements outside the volume count as invisible.
pub fn similarity_visibility(cv: &CostVolume, hom: &Homography, prior: &Mask, gate: f64) -> VisibilityMask {
    let (w, h) = (cv.width, cv.height);
    let d = cv.d_max as f64;
    let mut vis = VisibilityMask::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !prior.data[i] {
                continue;
            }
            let Ok(p) = hom.try_apply([x as f64, y as f64]) else {
                continue;
            };
            let (ux, uy) = (p[0] - x as f64, p[1] - y as f64);
            if !(ux.abs() <= d && uy.abs() <= d) {
                continue;
            }
            let (x0, y0) = (ux.floor().min(d - 1.0), uy.floor().min(d - 1.0));
            let (tx, ty) = (ux - x0, uy - y0);
            let c = cv.at(x, y);
            let mut s = 0.0;
            let mut ok = true;
            for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                    let wgt = wx * wy;
                    if wgt == 0.0 {
                        continue;
                    }
                    let v = c[cv.channel((x0 + dx) as isize, (y0 + dy) as isize)];
                    if !v.is_finite() {
                        ok = false;
                    }
                    s += wgt * v;
                }
            }
            if ok && s > gate {
                vis.values[i] = 1.0;
            }
        }
    }
    vis
}

/// Decodes `cv`, fits the increment and, under
/// [`VisibilityRule::Similarity`], replaces the visibility by
/// [`similarity_visibility`] at the fitted homography.
pub fn estimate_increment_from_cost_volume(
    cv: &CostVolume,
    temperature: f64,
    vis_prior: &Mask,
    cfg: &AnalyticConfig,
) -> Result<IncrementEstimate> {
    let field = soft_argmax_decode(cv, temperature);
    let mut est = estimate_increment_analytic(&field, vis_prior, cfg)?;
    if cfg.visibility == VisibilityRule::Similarity {
        est.vis = similarity_visibility(cv, &est.warp()?, vis_prior, cfg.similarity_gate);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{four_point_to_homography, FourPointDisplacement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field_from(h: &Homography, size: usize) -> DisplacementField {
        let mut disp = Vec::new();
        for y in 0..size {
            for x in 0..size {
                let p = h.apply([x as f64, y as f64]);
                disp.push([p[0] - x as f64, p[1] - y as f64]);
            }
        }
        DisplacementField {
            width: size,
            height: size,
            d_max: 4,
            displacement: disp,
            peak: vec![1.0; size * size],
            peak_ratio: vec![3.0; size * size],
        }
    }

    #[test]
    fn zero_field_gives_identity() {
        let f = field_from(&Homography::IDENTITY, 30);
        let est = estimate_increment_analytic(&f, &Mask::filled(30, 30, true), &AnalyticConfig::default())
            .unwrap();
        assert!(est.disp.max_abs() < 1e-9);
        assert_eq!(est.vis.visible_fraction(), 1.0);
    }

    #[test]
    fn exact_fields_recovered_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let size = 60;
        for _ in 0..100 {
            let d = FourPointDisplacement::from_array(std::array::from_fn(|_| rng.gen_range(-4.0..4.0)));
            let h = four_point_to_homography(&d, size, size).unwrap();
            let est = estimate_increment_analytic(
                &field_from(&h, size),
                &Mask::filled(size, size, true),
                &AnalyticConfig::default(),
            )
            .unwrap();
            let err = est.disp.d.iter().zip(&d.d).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).fold(0.0, f64::max);
            assert!(err < 0.05, "corner error {err}");
        }
    }

    #[test]
    fn structured_outliers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let size = 60;
        for trial in 0..20 {
            let d = FourPointDisplacement::from_array(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)));
            let h = four_point_to_homography(&d, size, size).unwrap();
            let mut f = field_from(&h, size);
            // Occluder: a block covering 30-40% of the template moving rigidly.
            let frac = 0.3 + 0.1 * (trial as f64 / 19.0);
            let cols = (frac * size as f64).round() as usize;
            let shift = [rng.gen_range(-4.0..4.0), rng.gen_range(7.0..9.0)];
            let mut outlier = vec![false; size * size];
            for y in 0..size {
                for x in size - cols..size {
                    let i = y * size + x;
                    f.displacement[i] = shift;
                    f.peak_ratio[i] = 1.05;
                    outlier[i] = true;
                }
            }
            let est = estimate_increment_analytic(&f, &Mask::filled(size, size, true), &AnalyticConfig::default()).unwrap();
            let src: Vec<Point> = (0..size * size).map(|i| [(i % size) as f64, (i / size) as f64]).collect();
            let dst: Vec<Point> = src.iter().zip(&f.displacement).map(|(p, u)| [p[0] + u[0], p[1] + u[1]]).collect();
            let (_, wts) = robust_fit(&src, &dst, &vec![1.0; size * size], &AnalyticConfig::default()).unwrap();
            let mean = |sel: bool| {
                let v: Vec<f64> = wts.iter().zip(&outlier).filter(|(_, &o)| o == sel).map(|(w, _)| *w).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            assert!(mean(true) < 0.2 * mean(false), "trial {trial}: {} vs {}", mean(true), mean(false));
            let err = est.disp.d.iter().zip(&d.d).map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).fold(0.0, f64::max);
            assert!(err < 0.5, "trial {trial}: corner error {err}");
            for (i, &o) in outlier.iter().enumerate() {
                if o {
                    assert_eq!(est.vis.values[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn insufficient_support() {
        let mut f = field_from(&Homography::IDENTITY, 20);
        f.peak = vec![0.05; 400];
        for i in 0..11 {
            f.peak[i * 13] = 0.9;
        }
        let r = estimate_increment_analytic(&f, &Mask::filled(20, 20, true), &AnalyticConfig::default());
        assert!(matches!(r, Err(Error::InsufficientSupport { supported: 11, required: 12 })));
    }
}
