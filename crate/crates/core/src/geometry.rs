//! Homography algebra and the four-corner parameterization.
//!
//! Conventions used throughout the crate:
//!
//! * Points are `[x, y]` in pixels, pixel-center convention: a `W x H`
//!   template spans `(0, 0)..=(W - 1, H - 1)`.
//! * Quads list corners clockwise from the top-left (top-left, top-right,
//!   bottom-right, bottom-left). With image axes (y down) that ordering has
//!   positive signed area.
//! * A [`Homography`] is stored in canonical scale: `h33 = 1` whenever
//!   `|h33| > 1e-9`, otherwise unit Frobenius norm with a non-negative trace.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const DET_EPS: f64 = 1e-12;
const H33_EPS: f64 = 1e-9;

/// Invertible 3x3 projective transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY: Homography = Homography {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Builds a homography from a raw matrix, canonicalizing its scale.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Singular(f64::NAN));
        }
        let m = canonicalize(m).ok_or(Error::Singular(0.0))?;
        let det = det3(&m);
        if det.abs() <= DET_EPS {
            return Err(Error::Singular(det));
        }
        Ok(Homography { m })
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Homography {
            m: [[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn to_array(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }

    /// Maps a point, failing when it lands on the line at infinity.
    pub fn try_apply(&self, p: Point) -> Result<Point> {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        if w.abs() < 1e-12 {
            return Err(Error::PointAtInfinity);
        }
        Ok([
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ])
    }

    /// Maps a point without checking the projective denominator.
    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        [
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ]
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Homography) -> Homography {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        // Product of two invertible matrices stays invertible; only the scale
        // needs fixing.
        Homography {
            m: canonicalize(r).unwrap_or(r),
        }
    }

    pub fn invert(&self) -> Result<Homography> {
        let m = &self.m;
        let det = det3(m);
        if det.abs() < DET_EPS || !det.is_finite() {
            return Err(Error::Singular(det));
        }
        let inv = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Homography::from_matrix(inv.map(|row| row.map(|v| v / det)))
    }

    /// Conjugates a template-space homography into another template size:
    /// returns `S * self * S^-1` with `S` scaling by `factor`.
    pub fn rescaled(&self, factor: f64) -> Homography {
        let s = Homography::scaling(factor, factor);
        let s_inv = Homography::scaling(1.0 / factor, 1.0 / factor);
        s.compose(self).compose(&s_inv)
    }

    /// Maximum corner distance between two homographies over `points`.
    pub fn max_point_distance(&self, other: &Homography, points: &[Point]) -> f64 {
        points
            .iter()
            .map(|&p| distance(self.apply(p), other.apply(p)))
            .fold(0.0, f64::max)
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl fmt::Display for Homography {
    /// Nine space-separated floats, row-major, shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.to_array();
        for (i, v) in a.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for Homography {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let values: Vec<f64> = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::parse(1, format!("bad float {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 9 {
            return Err(Error::parse(
                1,
                format!("expected 9 values, found {}", values.len()),
            ));
        }
        Homography::from_matrix([
            [values[0], values[1], values[2]],
            [values[3], values[4], values[5]],
            [values[6], values[7], values[8]],
        ])
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn canonicalize(m: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let h33 = m[2][2];
    if h33.abs() > H33_EPS {
        return Some(m.map(|row| row.map(|v| v / h33)));
    }
    let norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let trace = m[0][0] + m[1][1] + m[2][2];
    let s = if trace < 0.0 { -norm } else { norm };
    Some(m.map(|row| row.map(|v| v / s)))
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Four corners of a `width x height` template, clockwise from top-left.
pub fn template_corners(width: usize, height: usize) -> [Point; 4] {
    let w = width as f64 - 1.0;
    let h = height as f64 - 1.0;
    [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
}

/// Four ordered corners of a planar region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [Point; 4],
}

impl Quad {
    /// Validates convexity, orientation and area.
    pub fn new(corners: [Point; 4]) -> Result<Self> {
        let q = Quad { corners };
        q.validate()?;
        Ok(q)
    }

    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Quad::new([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corners;
        if c.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateQuad("non-finite corner".into()));
        }
        for i in 0..4 {
            let a = c[i];
            let b = c[(i + 1) % 4];
            let d = c[(i + 2) % 4];
            let cross = (b[0] - a[0]) * (d[1] - b[1]) - (b[1] - a[1]) * (d[0] - b[0]);
            if cross <= 0.0 {
                return Err(Error::DegenerateQuad(format!(
                    "not strictly convex clockwise at corner {}",
                    (i + 1) % 4
                )));
            }
        }
        let area = self.area();
        if area < 16.0 {
            return Err(Error::DegenerateQuad(format!("area {area} below 16 px^2")));
        }
        Ok(())
    }

    /// Signed shoelace area (positive for the clockwise-in-image ordering).
    pub fn area(&self) -> f64 {
        polygon_area(&self.corners)
    }

    pub fn map(&self, h: &Homography) -> Result<Quad> {
        let mut corners = [[0.0; 2]; 4];
        for (out, &p) in corners.iter_mut().zip(&self.corners) {
            *out = h.try_apply(p)?;
        }
        Ok(Quad { corners })
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_convex(&self.corners, p)
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &self.corners {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
        (lo, hi)
    }

    pub fn to_array(&self) -> [f64; 8] {
        let c = &self.corners;
        [
            c[0][0], c[0][1], c[1][0], c[1][1], c[2][0], c[2][1], c[3][0], c[3][1],
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Result<Self> {
        Quad::new([[a[0], a[1]], [a[2], a[3]], [a[4], a[5]], [a[6], a[7]]])
    }
}

pub(crate) fn polygon_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Inclusive point-in-convex-polygon test; accepts either orientation.
pub(crate) fn point_in_convex(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross != 0.0 {
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
    }
    true
}

/// Even-odd rule; works for any simple polygon. Boundary points may land
/// on either side.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1])
            && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0]
        {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Displacements of the four template corners, same ordering as [`Quad`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FourPointDisplacement {
    pub d: [Point; 4],
}

impl FourPointDisplacement {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn uniform(dx: f64, dy: f64) -> Self {
        FourPointDisplacement { d: [[dx, dy]; 4] }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let d = &self.d;
        [
            d[0][0], d[0][1], d[1][0], d[1][1], d[2][0], d[2][1], d[3][0], d[3][1],
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        FourPointDisplacement {
            d: [[a[0], a[1]], [a[2], a[3]], [a[4], a[5]], [a[6], a[7]]],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        FourPointDisplacement {
            d: self.d.map(|p| [p[0] * factor, p[1] * factor]),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.d.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Exact homography through four correspondences, `h(src[k]) = dst[k]`.
///
/// Both point sets are Hartley-normalized before solving the 8x8 system by
/// partial-pivot Gaussian elimination.
pub fn solve_homography(src: &[Point; 4], dst: &[Point; 4]) -> Result<Homography> {
    let (ts, ns) = normalize_points(src)?;
    let (td, nd) = normalize_points(dst)?;

    let mut a = [[0.0f64; 9]; 8];
    for k in 0..4 {
        let [x, y] = ns[k];
        let [u, v] = nd[k];
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    let h = solve_augmented8(a).ok_or_else(|| {
        Error::DegenerateQuad("rank-deficient 4-point system".into())
    })?;
    let hn = Homography::from_matrix([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
        .map_err(|_| Error::DegenerateQuad("singular 4-point solution".into()))?;
    let td_inv = td.invert()?;
    Homography::from_matrix(td_inv.compose(&hn).compose(&ts).m)
        .map_err(|_| Error::DegenerateQuad("singular 4-point solution".into()))
}

fn normalize_points(p: &[Point; 4]) -> Result<(Homography, [Point; 4])> {
    let cx = p.iter().map(|q| q[0]).sum::<f64>() / 4.0;
    let cy = p.iter().map(|q| q[1]).sum::<f64>() / 4.0;
    let mean_dist = p
        .iter()
        .map(|q| ((q[0] - cx).powi(2) + (q[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return Err(Error::DegenerateQuad("coincident points".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Homography {
        m: [[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]],
    };
    Ok((t, p.map(|q| [s * (q[0] - cx), s * (q[1] - cy)])))
}

fn solve_augmented8(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    for col in 0..8 {
        let (pivot_row, pivot) = (col..8)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot < 1e-10 {
            return None;
        }
        a.swap(col, pivot_row);
        for r in col + 1..8 {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..9 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = [0.0; 8];
    for r in (0..8).rev() {
        let s: f64 = (r + 1..8).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][8] - s) / a[r][r];
    }
    Some(x)
}

/// Homography taking each template corner `c_k` to `c_k + d_k`.
pub fn four_point_to_homography(
    disp: &FourPointDisplacement,
    width: usize,
    height: usize,
) -> Result<Homography> {
    if width < 2 || height < 2 {
        return Err(Error::DegenerateQuad(format!(
            "template {width}x{height} too small"
        )));
    }
    let src = template_corners(width, height);
    let mut dst = src;
    for (p, d) in dst.iter_mut().zip(&disp.d) {
        p[0] += d[0];
        p[1] += d[1];
    }
    solve_homography(&src, &dst)
}

/// Inverse of [`four_point_to_homography`]: `d_k = h(c_k) - c_k`.
pub fn homography_to_four_point(
    h: &Homography,
    width: usize,
    height: usize,
) -> Result<FourPointDisplacement> {
    let corners = template_corners(width, height);
    let mut d = [[0.0; 2]; 4];
    for (out, c) in d.iter_mut().zip(corners) {
        let p = h.try_apply(c)?;
        *out = [p[0] - c[0], p[1] - c[1]];
    }
    Ok(FourPointDisplacement { d })
}

/// `H^n` mapping a frame quad onto the `width x height` template corners.
pub fn normalization_homography(quad: &Quad, width: usize, height: usize) -> Result<Homography> {
    quad.validate()?;
    solve_homography(&quad.corners, &template_corners(width, height))
}

/// Applies an inter-template increment: `H_j^n <- H^s * H_j^n`.
pub fn surrogate_update(h_jn: &Homography, h_s: &Homography) -> Homography {
    h_s.compose(h_jn)
}

/// Full frame-to-frame homography `(H_i^n)^-1 * H_j^n`, mapping current-frame
/// object pixels to reference-frame pixels.
pub fn recover_full_homography(h_in: &Homography, h_jn: &Homography) -> Result<Homography> {
    Ok(h_in.invert()?.compose(h_jn))
}
