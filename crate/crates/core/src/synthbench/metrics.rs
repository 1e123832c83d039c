use serde::{Deserialize, Serialize};

use super::io::{ResultRecord, SequenceAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{distance, solve_homography, Homography, Quad};

/// How per-corner distances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Rms,
    Mean,
}

fn combine(d: [f64; 4], how: Averaging) -> f64 {
    match how {
        Averaging::Rms => (d.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt(),
        Averaging::Mean => d.iter().sum::<f64>() / 4.0,
    }
}

/// Alignment error: RMS of the four corner distances.
pub fn metric_ae(pred: &Quad, gt: &Quad) -> f64 {
    metric_ae_with(pred, gt, Averaging::Rms)
}

pub fn metric_ae_with(pred: &Quad, gt: &Quad, how: Averaging) -> f64 {
    combine(std::array::from_fn(|k| distance(pred.corners[k], gt.corners[k])), how)
}

/// Homography discrepancy: mean distance between the images of the
/// reference quad corners under both homographies.
pub fn metric_hd(h_pred: &Homography, h_gt: &Homography, reference: &Quad) -> Result<f64> {
    metric_hd_with(h_pred, h_gt, reference, Averaging::Mean)
}

pub fn metric_hd_with(h_pred: &Homography, h_gt: &Homography, reference: &Quad, how: Averaging) -> Result<f64> {
    let mut d = [0.0; 4];
    for (k, p) in reference.corners.iter().enumerate() {
        d[k] = distance(h_pred.try_apply(*p)?, h_gt.try_apply(*p)?);
    }
    Ok(combine(d, how))
}

/// Per-frame AE and HD; `None` where ground truth is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameErrors {
    pub ae: Vec<Option<f64>>,
    pub hd: Vec<Option<f64>>,
}

/// Errors of tracker results against annotations. Frame 0 of the
/// annotation is the initialization; predicted quads are the reference
/// quad mapped by the inverse of each result's `h_ij`.
pub fn sequence_errors(results: &[ResultRecord], ann: &SequenceAnnotation) -> Result<FrameErrors> {
    sequence_errors_with(results, ann, Averaging::Rms, Averaging::Mean)
}

/// [`sequence_errors`] with explicit AE and HD averaging.
pub fn sequence_errors_with(
    results: &[ResultRecord],
    ann: &SequenceAnnotation,
    ae_how: Averaging,
    hd_how: Averaging,
) -> Result<FrameErrors> {
    if results.len() != ann.frames.len() {
        return Err(Error::LengthMismatch {
            left: results.len(),
            right: ann.frames.len(),
        });
    }
    let reference = ann
        .frames
        .first()
        .and_then(|f| f.1)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "annotation needs a ground-truth quad for the first frame".into(),
        })?;
    let mut ae = Vec::with_capacity(results.len());
    let mut hd = Vec::with_capacity(results.len());
    for (r, (idx, gt)) in results.iter().zip(&ann.frames) {
        if r.frame_index != *idx {
            return Err(Error::LengthMismatch {
                left: r.frame_index,
                right: *idx,
            });
        }
        let Some(gt) = gt else {
            ae.push(None);
            hd.push(None);
            continue;
        };
        let fwd = r.h_ij.invert()?;
        let mut c = [[0.0; 2]; 4];
        for (o, p) in c.iter_mut().zip(&reference.corners) {
            *o = fwd.try_apply(*p)?;
        }
        ae.push(Some(combine(std::array::from_fn(|k| distance(c[k], gt.corners[k])), ae_how)));
        let h_gt = solve_homography(&reference.corners, &gt.corners)?;
        hd.push(Some(metric_hd_with(&fwd, &h_gt, &reference, hd_how)?));
    }
    Ok(FrameErrors { ae, hd })
}

/// Fraction of present values `<= t` for each threshold.
pub fn empirical_cdf(values: &[Option<f64>], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    thresholds
        .iter()
        .map(|&t| {
            let frac = if present.is_empty() {
                0.0
            } else {
                present.iter().filter(|&&v| v <= t).count() as f64 / present.len() as f64
            };
            (t, frac)
        })
        .collect()
}

/// Fraction of frames with AE within each threshold.
pub fn precision_curve(errors: &FrameErrors, thresholds: &[f64]) -> Vec<(f64, f64)> {
    empirical_cdf(&errors.ae, thresholds)
}

/// Fraction of frames with HD within each threshold.
pub fn success_curve(errors: &FrameErrors, thresholds: &[f64]) -> Vec<(f64, f64)> {
    empirical_cdf(&errors.hd, thresholds)
}

/// Fraction of frames with AE < 5.
pub fn success_rate_at5(errors: &FrameErrors) -> f64 {
    let present: Vec<f64> = errors.ae.iter().flatten().copied().collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().filter(|&&v| v < 5.0).count() as f64 / present.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sq() -> Quad {
        Quad::axis_aligned(10.0, 10.0, 110.0, 110.0).unwrap()
    }

    #[test]
    fn ae_examples() {
        let q = sq();
        assert_eq!(metric_ae(&q, &q), 0.0);
        let moved = Quad::new(q.corners.map(|p| [p[0] + 3.0, p[1] + 4.0])).unwrap();
        assert!((metric_ae(&moved, &q) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn hd_examples() {
        let q = sq();
        let h = solve_homography(&q.corners, &[[0.0, 5.0], [90.0, 0.0], [95.0, 100.0], [3.0, 90.0]]).unwrap();
        assert_eq!(metric_hd(&h, &h, &q).unwrap(), 0.0);
        let shifted = Homography::translation(2.0, 0.0).compose(&h);
        assert!((metric_hd(&shifted, &h, &q).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn random_pairs_match_reference_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q = sq();
            let jit = |rng: &mut ChaCha8Rng| Quad::new(q.corners.map(|p| [p[0] + rng.gen_range(-5.0..5.0), p[1] + rng.gen_range(-5.0..5.0)])).unwrap();
            let (a, b) = (jit(&mut rng), jit(&mut rng));
            let mut s = 0.0;
            for k in 0..4 {
                let dx = a.corners[k][0] - b.corners[k][0];
                let dy = a.corners[k][1] - b.corners[k][1];
                s += dx * dx + dy * dy;
            }
            assert!((metric_ae(&a, &b) - (s / 4.0).sqrt()).abs() < 1e-12);
            let ha = solve_homography(&q.corners, &a.corners).unwrap();
            let hb = solve_homography(&q.corners, &b.corners).unwrap();
            let mut m = 0.0;
            for k in 0..4 {
                let pa = ha.apply(q.corners[k]);
                let pb = hb.apply(q.corners[k]);
                m += ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            }
            assert!((metric_hd(&ha, &hb, &q).unwrap() - m / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_examples() {
        let perfect = FrameErrors {
            ae: vec![Some(0.0); 5],
            hd: vec![Some(0.0); 5],
        };
        let t: Vec<f64> = (0..=50).map(|v| v as f64).collect();
        assert!(precision_curve(&perfect, &t).iter().all(|p| p.1 == 1.0));
        let off = FrameErrors {
            ae: vec![Some(10.0), Some(10.0), None],
            hd: vec![Some(10.0); 3],
        };
        for (th, f) in precision_curve(&off, &t) {
            assert_eq!(f, if th < 10.0 { 0.0 } else { 1.0 });
        }
        assert_eq!(success_rate_at5(&perfect), 1.0);
        assert_eq!(success_rate_at5(&off), 0.0);
    }

    proptest! {
        #[test]
        fn curves_are_monotone(vals in proptest::collection::vec(proptest::option::of(0.0f64..60.0), 1..50)) {
            let t: Vec<f64> = (0..=60).map(|v| v as f64).collect();
            let c = empirical_cdf(&vals, &t);
            prop_assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert!(c.iter().all(|p| (0.0..=1.0).contains(&p.1)));
            if vals.iter().any(|v| v.is_some()) {
                prop_assert_eq!(c.last().unwrap().1, 1.0);
            }
        }
    }
}
