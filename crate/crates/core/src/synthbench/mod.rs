//! Synthetic training pairs and tracking sequences with exact ground truth,
//! plus the evaluation harness (alignment error, homography discrepancy,
//! precision/success curves) and the text/archive formats.

mod io;
mod metrics;
mod procedural;

pub use io::{
    format_annotations, format_results, load_dataset, load_sample, parse_annotations, parse_results,
    read_annotations, read_curve_csv, read_manifest, read_results, save_dataset, write_annotations,
    write_curve_csv, write_results, DatasetRecord, DatasetWriter, ResultRecord, SequenceAnnotation, Split,
};
pub use metrics::{
    empirical_cdf, metric_ae, metric_ae_with, metric_hd, metric_hd_with, precision_curve,
    sequence_errors, sequence_errors_with, success_curve, success_rate_at5, Averaging, FrameErrors,
};
pub use procedural::procedural_image;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{gt_visibility, VisibilityMask};
use crate::geometry::{
    four_point_to_homography, normalization_homography, solve_homography, FourPointDisplacement,
    Homography, Point, Quad,
};
use crate::imaging::{
    level_scale, photometric_augment, resize, sample_planar_object_filtered, warp_bilinear,
    ImageBuffer, PhotometricParams, PhotometricRanges, Template,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OccluderConfig {
    pub max_count: usize,
    pub min_vertices: usize,
    pub max_vertices: usize,
    /// Per-polygon area range as a fraction of the object quad area.
    pub min_area: f64,
    pub max_area: f64,
    /// When set, always place polygons whose areas sum to this fraction.
    pub target_fraction: Option<f64>,
}

impl Default for OccluderConfig {
    fn default() -> Self {
        OccluderConfig {
            max_count: 3,
            min_vertices: 3,
            max_vertices: 8,
            min_area: 0.02,
            max_area: 0.2,
            target_fraction: None,
        }
    }
}

impl OccluderConfig {
    pub const NONE: OccluderConfig = OccluderConfig {
        max_count: 0,
        min_vertices: 3,
        max_vertices: 8,
        min_area: 0.02,
        max_area: 0.2,
        target_fraction: None,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub template_size: usize,
    pub levels: Vec<usize>,
    /// Corner perturbation bound in template pixels.
    pub perturbation: f64,
    pub photometric: PhotometricRanges,
    pub occluders: OccluderConfig,
    pub max_retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            image_size: 240,
            template_size: 120,
            levels: vec![30, 60, 120],
            perturbation: 32.0,
            photometric: PhotometricRanges::default(),
            occluders: OccluderConfig::default(),
            max_retries: 32,
        }
    }
}

/// Everything needed to regenerate a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub seed: u64,
    pub perturbation: [f64; 8],
    pub photometric: PhotometricParams,
    pub occluders: Vec<Vec<Point>>,
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub reference: Template,
    pub tracked: Template,
    pub reference_frame: ImageBuffer,
    pub tracked_frame: ImageBuffer,
    /// Reference normalization (frame to full-resolution template).
    pub h_in: Homography,
    /// Ground truth tracked-frame to reference-frame map.
    pub h_ij: Homography,
    /// Object quad in the tracked frame.
    pub gt_quad: Quad,
    pub gt_disp: FourPointDisplacement,
    /// Ground-truth visibility per level on the reference grid, coarsest
    /// first.
    pub gt_vis: Vec<VisibilityMask>,
    pub provenance: Provenance,
}

impl TrainingSample {
    /// Reference and tracked templates at a pyramid level.
    pub fn level_templates(&self, size: usize) -> Result<(Template, Template)> {
        let k = level_scale(size, self.reference.size());
        let h = Homography::scaling(k, k).compose(&self.h_in);
        Ok((
            sample_planar_object_filtered(&self.reference_frame, &h, size)?,
            sample_planar_object_filtered(&self.tracked_frame, &h, size)?,
        ))
    }

    /// Ground-truth visibility at an arbitrary level.
    pub fn gt_vis_at(&self, size: usize) -> Result<VisibilityMask> {
        let k = level_scale(size, self.reference.size());
        let s = Homography::scaling(k, k).compose(&self.h_in).compose(&self.h_ij);
        let f = &self.tracked_frame;
        gt_visibility(&self.gt_quad, (f.width(), f.height()), &self.provenance.occluders, &s, size)
    }
}

fn polygon_area(p: &[Point]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

/// Convex hull (Andrew's monotone chain), counter-clockwise in y-down
/// coordinates viewed as math axes.
fn convex_hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Random convex polygons over the object quad.
pub fn random_occluders<R: Rng>(rng: &mut R, quad: &Quad, cfg: &OccluderConfig) -> Vec<Vec<Point>> {
    let areas: Vec<f64> = match cfg.target_fraction {
        Some(t) => {
            let n = rng.gen_range(1..=cfg.max_count.max(1));
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|v| t * v / s).collect()
        }
        None => {
            let n = rng.gen_range(0..=cfg.max_count);
            (0..n).map(|_| rng.gen_range(cfg.min_area..=cfg.max_area)).collect()
        }
    };
    let qa = quad.area();
    let c = quad.corners;
    let centroid = [
        c.iter().map(|p| p[0]).sum::<f64>() / 4.0,
        c.iter().map(|p| p[1]).sum::<f64>() / 4.0,
    ];
    areas
        .into_iter()
        .map(|frac| {
            // centre: bilinear point of the quad shrunk towards its centroid
            let (s, t) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let b = [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t];
            let mut ctr = [0.0; 2];
            for k in 0..4 {
                for a in 0..2 {
                    ctr[a] += b[k] * (centroid[a] + 0.7 * (c[k][a] - centroid[a]));
                }
            }
            let nv = rng.gen_range(cfg.min_vertices.max(3)..=cfg.max_vertices.max(3));
            let aspect = rng.gen_range(0.5..1.0);
            let rot: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut pts = Vec::with_capacity(nv);
            while pts.len() < 3 {
                pts.clear();
                for _ in 0..nv {
                    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let r = rng.gen_range(0.6..1.0);
                    let (x, y) = (r * a.cos(), r * aspect * a.sin());
                    pts.push([x * rot.cos() - y * rot.sin(), x * rot.sin() + y * rot.cos()]);
                }
                pts = convex_hull(pts);
            }
            let scale = (frac * qa / polygon_area(&pts)).sqrt();
            pts.iter().map(|p| [ctr[0] + p[0] * scale, ctr[1] + p[1] * scale]).collect()
        })
        .collect()
}

/// Paints each polygon (pixel centers inside) with `texture`.
pub fn paint_occluders(frame: &mut ImageBuffer, occluders: &[Vec<Point>], texture: &ImageBuffer) {
    let tex = texture.with_channels(frame.channels());
    for poly in occluders {
        let xs = poly.iter().map(|p| p[0]);
        let ys = poly.iter().map(|p| p[1]);
        let x0 = xs.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x1 = xs.fold(f64::NEG_INFINITY, f64::max).ceil().min(frame.width() as f64 - 1.0);
        let y0 = ys.clone().fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y1 = ys.fold(f64::NEG_INFINITY, f64::max).ceil().min(frame.height() as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                if crate::geometry::point_in_polygon(poly, [x as f64, y as f64]) {
                    for c in 0..frame.channels() {
                        let v = tex.get(x % tex.width(), y % tex.height(), c);
                        frame.set(x, y, c, v);
                    }
                }
            }
        }
    }
}

/// Centered `template_size` window in an `image_size` frame.
pub fn center_quad(image_size: usize, template_size: usize) -> Result<Quad> {
    let o = (image_size as f64 - template_size as f64) / 2.0;
    let e = o + template_size as f64 - 1.0;
    Quad::axis_aligned(o, o, e, e)
}

/// One training pair from `source` (resized to the configured frame size),
/// a pure function of `(source, cfg, seed)`.
pub fn generate_pair(source: &ImageBuffer, cfg: &GeneratorConfig, seed: u64) -> Result<TrainingSample> {
    generate_pair_named(source, "unnamed", cfg, seed)
}

pub fn generate_pair_named(
    source: &ImageBuffer,
    source_id: &str,
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<TrainingSample> {
    if cfg.template_size < 8 || cfg.image_size < cfg.template_size {
        return Err(Error::Config("image_size must be >= template_size >= 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.template_size;
    let frame_i = if source.width() == cfg.image_size && source.height() == cfg.image_size {
        source.clone()
    } else {
        resize(source, cfg.image_size, cfg.image_size)
    };
    let ref_quad = center_quad(cfg.image_size, n)?;
    let h_in = normalization_homography(&ref_quad, n, n)?;

    let mut found = None;
    for _ in 0..cfg.max_retries.max(1) {
        let p = cfg.perturbation;
        let d: [f64; 8] = std::array::from_fn(|_| if p > 0.0 { rng.gen_range(-p..=p) } else { 0.0 });
        let disp = FourPointDisplacement::from_array(d);
        let mut c = ref_quad.corners;
        for (q, dk) in c.iter_mut().zip(&disp.d) {
            q[0] += dk[0];
            q[1] += dk[1];
        }
        if let Ok(q) = Quad::new(c) {
            if four_point_to_homography(&disp, n, n).is_ok() {
                found = Some((d, disp, q));
                break;
            }
        }
    }
    let (d, gt_disp, gt_quad) = found.ok_or_else(|| {
        Error::DegenerateQuad(format!("no valid perturbation in {} tries", cfg.max_retries))
    })?;
    let h_ij = solve_homography(&gt_quad.corners, &ref_quad.corners)?;
    let (mut frame_j, _) = warp_bilinear(&frame_i, &h_ij, cfg.image_size, cfg.image_size);

    let occluders = random_occluders(&mut rng, &gt_quad, &cfg.occluders);
    if !occluders.is_empty() {
        let tex_seed = rng.gen::<u64>();
        let tex = procedural_image(tex_seed, cfg.image_size, cfg.image_size);
        paint_occluders(&mut frame_j, &occluders, &tex);
    }
    let photometric = cfg.photometric.sample(&mut rng);
    let frame_j = photometric_augment(&frame_j, &photometric);

    let reference = sample_planar_object_filtered(&frame_i, &h_in, n)?;
    let tracked = sample_planar_object_filtered(&frame_j, &h_in, n)?;
    let mut sample = TrainingSample {
        reference,
        tracked,
        reference_frame: frame_i,
        tracked_frame: frame_j,
        h_in,
        h_ij,
        gt_quad,
        gt_disp,
        gt_vis: Vec::new(),
        provenance: Provenance {
            source_id: source_id.to_string(),
            seed,
            perturbation: d,
            photometric,
            occluders,
        },
    };
    sample.gt_vis = cfg
        .levels
        .iter()
        .map(|&s| sample.gt_vis_at(s))
        .collect::<Result<_>>()?;
    Ok(sample)
}

/// Scripted tracking sequence settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub frames: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub object_size: usize,
    /// Per-frame translation bound in pixels.
    pub max_translation: f64,
    /// Per-frame independent corner jitter bound in pixels.
    pub max_jitter: f64,
    pub photometric: PhotometricRanges,
    /// `(first frame, length)` of a full occlusion.
    pub occlusion: Option<(usize, usize)>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            frames: 30,
            frame_width: 320,
            frame_height: 240,
            object_size: 120,
            max_translation: 6.0,
            max_jitter: 0.8,
            photometric: PhotometricRanges::NONE,
            occlusion: None,
        }
    }
}

/// Frames plus per-frame ground-truth quads; frame 0 is the reference.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub frames: Vec<ImageBuffer>,
    pub quads: Vec<Quad>,
}

impl Sequence {
    pub fn annotation(&self) -> SequenceAnnotation {
        SequenceAnnotation {
            frames: self.quads.iter().enumerate().map(|(i, q)| (i, Some(*q))).collect(),
        }
    }
}

/// A planar object drifting over a static background; the object is the
/// centre of `source`, the background a second procedural image.
pub fn generate_sequence(source: &ImageBuffer, cfg: &SequenceConfig, seed: u64) -> Result<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fw, fh, s) = (cfg.frame_width, cfg.frame_height, cfg.object_size);
    if s + 20 > fw.min(fh) {
        return Err(Error::Config("object does not fit the frame".into()));
    }
    let obj = resize(source, s, s);
    let background = procedural_image(rng.gen(), fw, fh);
    let occluder = procedural_image(rng.gen(), fw, fh);
    let obj_quad = Quad::axis_aligned(0.0, 0.0, s as f64 - 1.0, s as f64 - 1.0)?;
    let (ox, oy) = ((fw - s) as f64 / 2.0, (fh - s) as f64 / 2.0);
    let mut pos = [ox, oy];
    let mut jitter = [[0.0f64; 2]; 4];
    let margin = 8.0;
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut quads = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for a in 0..2 {
                let hi = if a == 0 { (fw - s) as f64 - margin } else { (fh - s) as f64 - margin };
                let step = rng.gen_range(-cfg.max_translation..=cfg.max_translation);
                let mut v = pos[a] + step;
                if v < margin || v > hi {
                    v = pos[a] - step;
                }
                pos[a] = v.clamp(margin, hi);
            }
            for j in jitter.iter_mut() {
                for a in 0..2 {
                    let lim = 0.06 * s as f64;
                    let step = if cfg.max_jitter > 0.0 {
                        rng.gen_range(-cfg.max_jitter..=cfg.max_jitter)
                    } else {
                        0.0
                    };
                    j[a] = (j[a] + step).clamp(-lim, lim);
                }
            }
        }
        let mut c = obj_quad.corners;
        for (k, p) in c.iter_mut().enumerate() {
            p[0] += pos[0] + jitter[k][0];
            p[1] += pos[1] + jitter[k][1];
        }
        let quad = Quad::new(c)?;
        // frame pixel -> object pixel
        let h = solve_homography(&quad.corners, &obj_quad.corners)?;
        let (warped, valid) = warp_bilinear(&obj, &h, fw, fh);
        let mut frame = background.with_channels(obj.channels());
        for (i, &ok) in valid.data.iter().enumerate() {
            if ok {
                let ch = frame.channels();
                frame.data_mut()[i * ch..(i + 1) * ch].copy_from_slice(&warped.data()[i * ch..(i + 1) * ch]);
            }
        }
        if let Some((start, len)) = cfg.occlusion {
            if t >= start && t < start + len {
                let (b0, b1) = quad.bounds();
                let pad = 4.0;
                let poly = vec![
                    [b0[0] - pad, b0[1] - pad],
                    [b1[0] + pad, b0[1] - pad],
                    [b1[0] + pad, b1[1] + pad],
                    [b0[0] - pad, b1[1] + pad],
                ];
                paint_occluders(&mut frame, &[poly], &occluder);
            }
        }
        let params = cfg.photometric.sample(&mut rng);
        frames.push(photometric_augment(&frame, &params));
        quads.push(quad);
    }
    Ok(Sequence { frames, quads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::homography_to_four_point;

    fn source() -> ImageBuffer {
        procedural_image(11, 240, 240)
    }

    #[test]
    fn zero_perturbation_gives_zero_disp() {
        let cfg = GeneratorConfig {
            perturbation: 0.0,
            photometric: PhotometricRanges::NONE,
            occluders: OccluderConfig::NONE,
            ..GeneratorConfig::default()
        };
        let s = generate_pair(&source(), &cfg, 3).unwrap();
        assert_eq!(s.gt_disp, FourPointDisplacement::zero());
        let diff = s
            .reference
            .image
            .data()
            .iter()
            .zip(s.tracked.image.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "{diff}");
        assert!(s.gt_vis.iter().all(|v| v.visible_fraction() == 1.0));
    }

    #[test]
    fn default_range_and_gt_consistency() {
        let cfg = GeneratorConfig::default();
        let src = source();
        for seed in 0..20 {
            let s = generate_pair(&src, &cfg, seed).unwrap();
            assert!(s.gt_disp.max_abs() <= 32.0);
            // gt_disp is the four-point form of H_in * H_ij^-1 * H_in^-1
            let w = s.h_in.compose(&s.h_ij.invert().unwrap()).compose(&s.h_in.invert().unwrap());
            let d = homography_to_four_point(&w, 120, 120).unwrap();
            for (a, b) in d.d.iter().zip(&s.gt_disp.d) {
                assert!((a[0] - b[0]).abs() < 1e-8 && (a[1] - b[1]).abs() < 1e-8);
            }
            assert_eq!(s.gt_vis.len(), 3);
            assert_eq!(s.gt_vis[0].width, 30);
        }
    }

    #[test]
    fn reproducible() {
        let src = source();
        let cfg = GeneratorConfig::default();
        let a = generate_pair(&src, &cfg, 9).unwrap();
        let b = generate_pair(&src, &cfg, 9).unwrap();
        assert_eq!(a.tracked.image, b.tracked.image);
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(a.gt_vis, b.gt_vis);
    }

    #[test]
    fn hull_is_convex_and_area_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = center_quad(240, 120).unwrap();
        let cfg = OccluderConfig {
            target_fraction: Some(0.25),
            ..OccluderConfig::default()
        };
        for _ in 0..50 {
            let polys = random_occluders(&mut rng, &q, &cfg);
            let total: f64 = polys.iter().map(|p| polygon_area(p)).sum();
            assert!((total / q.area() - 0.25).abs() < 1e-9);
            for p in &polys {
                assert!(p.len() >= 3);
            }
        }
    }

    #[test]
    fn sequence_ground_truth() {
        let cfg = SequenceConfig {
            frames: 5,
            ..SequenceConfig::default()
        };
        let seq = generate_sequence(&source(), &cfg, 1).unwrap();
        assert_eq!(seq.frames.len(), 5);
        for (a, b) in seq.quads.windows(2).map(|w| (w[0], w[1])) {
            for (p, q) in a.corners.iter().zip(&b.corners) {
                assert!((p[0] - q[0]).abs() <= 6.0 + 0.8 + 1e-9);
            }
        }
        assert_eq!(seq.annotation().frames.len(), 5);
    }
}
