//! Joint training of the feature network and learned head on synthetic
//! pairs, and labeled statistics for the confidence head.
//!
//! Every level sees the tracked frame resampled from a start estimate whose
//! residual is a random fraction of the ground-truth motion, capped so the
//! corners stay inside the cost-volume window. That mimics what each level
//! receives inside the coarse-to-fine loop.

use std::borrow::Cow;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{current_quad, init_track, HeadKind, TrackerConfig, TrackerModel};
use crate::correlation::{build_cost_volume, cost_volume_backward};
use crate::error::{Error, Result};
use crate::estimation::{
    bce, loss_alignment, loss_alignment_backward, loss_homography, loss_total,
    LearnedHead, LossWeights,
};
use crate::features::{
    adam_step, network_input, AdamConfig, AdamState, ConvNetCache, ConvNetWeights, Extractor,
    FeatureMap, Topology,
};
use crate::geometry::{four_point_to_homography, homography_to_four_point, FourPointDisplacement, Homography};
use crate::imaging::{level_scale, sample_planar_object_filtered, Template};
use crate::synthbench::{load_sample, DatasetRecord, TrainingSample};

/// Schedule and model sizes for [`train_motion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionTrainConfig {
    pub topology: Topology,
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    /// Largest start residual per level, as a fraction of `d_max`.
    pub max_residual: f64,
    /// Levels trained on; empty means every tracker level. The network is
    /// fully convolutional, so skipping the finest level mostly saves time.
    pub train_levels: Vec<usize>,
    pub seed: u64,
}

impl Default for MotionTrainConfig {
    fn default() -> Self {
        MotionTrainConfig {
            topology: Topology::default(),
            head_hidden: 8,
            epochs: 20,
            batch: 32,
            adam: AdamConfig::default(),
            // Unit-length features make a constant map a free minimizer of
            // the alignment term, so it is down-weighted here.
            loss: LossWeights {
                lambda_v: 0.1,
                ..LossWeights::default()
            },
            max_residual: 0.9,
            train_levels: Vec::new(),
            seed: 0,
        }
    }
}

/// Random access to training pairs, in memory or streamed from an archive.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> Result<Cow<'_, TrainingSample>>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [TrainingSample] {
    fn len(&self) -> usize {
        <[TrainingSample]>::len(self)
    }

    fn get(&self, i: usize) -> Result<Cow<'_, TrainingSample>> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

impl SampleSource for Vec<TrainingSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn get(&self, i: usize) -> Result<Cow<'_, TrainingSample>> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

/// Samples of an on-disk archive, loaded on demand.
pub struct DiskSamples {
    pub dir: PathBuf,
    pub records: Vec<DatasetRecord>,
}

impl SampleSource for DiskSamples {
    fn len(&self) -> usize {
        self.records.len()
    }

    fn get(&self, i: usize) -> Result<Cow<'_, TrainingSample>> {
        Ok(Cow::Owned(load_sample(&self.dir, &self.records[i])?))
    }
}

/// Mean loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_d: f64,
    pub l_m: f64,
    pub l_v: f64,
    pub total: f64,
}

/// One level of one training pair, ready for the forward pass.
pub struct LevelExample {
    pub reference: Template,
    pub tracked: Template,
    /// Ground-truth four-point increment at this level.
    pub disp: FourPointDisplacement,
    pub vis: crate::imaging::VisibilityMask,
}

/// Builds the level-`size` example with a start residual of
/// `fraction * gt` (full-resolution four-point form).
pub fn level_example(sample: &TrainingSample, size: usize, fraction: f64) -> Result<LevelExample> {
    let n = sample.reference.size();
    let k = level_scale(size, n);
    let s = Homography::scaling(k, k);
    let w_gt = sample.h_in.compose(&sample.h_ij.invert()?).compose(&sample.h_in.invert()?);
    let d_full = homography_to_four_point(&w_gt, n, n)?.scaled(fraction);
    let residual = four_point_to_homography(&d_full, n, n)?;
    let start = residual.compose(&sample.h_in).compose(&sample.h_ij);
    Ok(LevelExample {
        reference: sample_planar_object_filtered(&sample.reference_frame, &s.compose(&sample.h_in), size)?,
        tracked: sample_planar_object_filtered(&sample.tracked_frame, &s.compose(&start), size)?,
        disp: d_full.scaled(k),
        vis: sample.gt_vis_at(size)?,
    })
}

/// Loss terms and parameter gradients of one level example.
pub struct ExampleGrads {
    pub l_d: f64,
    pub l_m: f64,
    pub l_v: f64,
    pub net: Vec<f64>,
    pub head: Vec<f64>,
}

fn features(net: &ConvNetWeights, t: &Template) -> Result<(FeatureMap, ConvNetCache)> {
    let (out, cache) = net.forward_cached(&network_input(t))?;
    let mut f = FeatureMap::from_tensor(&out, true);
    f.apply_mask(&t.valid);
    Ok((f, cache))
}

/// Forward and backward pass through network, cost volume and head.
pub fn example_grads(
    net: &ConvNetWeights,
    head: &LearnedHead,
    ex: &LevelExample,
    w: &LossWeights,
) -> Result<ExampleGrads> {
    let (f_r, cache_r) = features(net, &ex.reference)?;
    let (f_t, cache_t) = features(net, &ex.tracked)?;
    let cv = build_cost_volume(&f_r, &f_t, head.d_max)?;
    let (est, cache) = head.forward(&cv)?;
    let l_d = loss_homography(&est.disp, &ex.disp);
    if est.vis.values.len() != ex.vis.values.len() {
        return Err(Error::ShapeMismatch("visibility target size".into()));
    }
    // Visibility in double precision from the logits.
    let m: Vec<f64> = cache.z.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
    let n = m.len() as f64;
    let l_m = m.iter().zip(&ex.vis.values).map(|(&p, &y)| bce(p, y as f64)).sum::<f64>() / n;
    let mut dd = [0.0; 8];
    for c in 0..4 {
        for a in 0..2 {
            let diff = est.disp.d[c][a] - ex.disp.d[c][a];
            dd[2 * c + a] = w.lambda_d * diff.signum() * (diff != 0.0) as u8 as f64 / 4.0;
        }
    }
    let dz: Option<Vec<f64>> = (w.lambda_m > 0.0).then(|| {
        m.iter()
            .zip(&ex.vis.values)
            .map(|(&p, &y)| w.lambda_m * (p - y as f64) / n)
            .collect()
    });
    let hg = head.backward(&cv, &cache, &dd, dz.as_deref());
    let (mut g_r, mut g_t) = cost_volume_backward(&f_r, &f_t, head.d_max, &hg.cost_volume);
    let mut l_v = 0.0;
    if w.lambda_v > 0.0 {
        let h_tr = four_point_to_homography(&ex.disp, ex.vis.width, ex.vis.height)?.invert()?;
        l_v = loss_alignment(&f_r, &f_t, &h_tr, &ex.vis)?;
        let (a, b) = loss_alignment_backward(&f_r, &f_t, &h_tr, &ex.vis)?;
        for (g, v) in g_r.data.iter_mut().zip(&a.data) {
            *g += w.lambda_v * v;
        }
        for (g, v) in g_t.data.iter_mut().zip(&b.data) {
            *g += w.lambda_v * v;
        }
    }
    g_r.apply_mask(&ex.reference.valid);
    g_t.apply_mask(&ex.tracked.valid);
    let (mut g_net, _) = net.backward(&cache_r, &g_r.to_tensor());
    let (g2, _) = net.backward(&cache_t, &g_t.to_tensor());
    for (a, b) in g_net.iter_mut().zip(&g2) {
        *a += b;
    }
    Ok(ExampleGrads {
        l_d,
        l_m,
        l_v,
        net: g_net,
        head: hg.params,
    })
}

/// Trains a ConvNet extractor and a learned head on `samples`, summing the
/// per-level losses. Returns the model (learned head, no confidence head)
/// and per-epoch mean losses.
pub fn train_motion<S: SampleSource + ?Sized>(
    samples: &S,
    tracker: &TrackerConfig,
    cfg: &MotionTrainConfig,
) -> Result<(TrackerModel, Vec<EpochLog>)> {
    tracker.validate()?;
    if samples.is_empty() {
        return Err(Error::DegenerateDataset("no training samples".into()));
    }
    let levels = if cfg.train_levels.is_empty() {
        tracker.levels.clone()
    } else {
        cfg.train_levels.clone()
    };
    if levels.iter().any(|&s| s < 8 || s > tracker.template_size) {
        return Err(Error::Config("train_levels must lie in [8, template_size]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = ConvNetWeights::random(cfg.topology, rng.gen());
    let mut head = LearnedHead::init(tracker.d_max, cfg.head_hidden, tracker.temperature, rng.gen());
    let mut net_state = AdamState::new(net.params.len(), &cfg.adam);
    let mut head_state = AdamState::new(head.params.len(), &cfg.adam);
    let n = tracker.template_size;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.adam.lr_at(epoch);
        let (mut sd, mut sm, mut sv, mut count) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(batch) {
            let mut g_net = vec![0.0; net.params.len()];
            let mut g_head = vec![0.0; head.params.len()];
            let mut terms = 0usize;
            for &i in chunk {
                let s = samples.get(i)?;
                if s.reference.size() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "sample template size {} vs config {n}",
                        s.reference.size()
                    )));
                }
                let full = homography_to_four_point(
                    &s.h_in.compose(&s.h_ij.invert()?).compose(&s.h_in.invert()?),
                    n,
                    n,
                )?
                .max_abs();
                for &size in &levels {
                    let k = level_scale(size, n);
                    let cap = cfg.max_residual * tracker.d_max as f64;
                    let target = rng.gen_range(0.0..=cap);
                    let fraction = if full * k <= 1e-12 { 1.0 } else { (target / (full * k)).min(1.0) };
                    let ex = level_example(&s, size, fraction)?;
                    let g = example_grads(&net, &head, &ex, &cfg.loss)?;
                    for (a, b) in g_net.iter_mut().zip(&g.net) {
                        *a += b;
                    }
                    for (a, b) in g_head.iter_mut().zip(&g.head) {
                        *a += b;
                    }
                    sd += g.l_d;
                    sm += g.l_m;
                    sv += g.l_v;
                    terms += 1;
                }
            }
            // Levels are summed, samples averaged.
            let scale = levels.len() as f64 / terms.max(1) as f64;
            g_net.iter_mut().for_each(|v| *v *= scale);
            g_head.iter_mut().for_each(|v| *v *= scale);
            adam_step(net.params.data_mut(), &g_net, &mut net_state, lr)?;
            adam_step(head.params.data_mut(), &g_head, &mut head_state, lr)?;
            count += terms;
        }
        let c = count.max(1) as f64;
        let (l_d, l_m, l_v) = (sd / c, sm / c, sv / c);
        log.push(EpochLog {
            epoch,
            l_d,
            l_m,
            l_v,
            total: loss_total(l_d, l_m, l_v, &cfg.loss),
        });
    }
    if !net.params.is_finite() || !head.params.is_finite() {
        return Err(Error::DegenerateDataset("training diverged".into()));
    }
    Ok((
        TrackerModel {
            extractor: Extractor::ConvNet(Box::new(net)),
            head: Some(head),
            confidence: None,
        },
        log,
    ))
}

/// Tracks each pair from its reference position and records the
/// cost-volume statistics at the result together with the corner error
/// `L_d` against ground truth. Pairs whose alignment fails are kept with
/// the statistics at the start estimate and an infinite error.
pub fn collect_confidence_data(
    samples: &[TrainingSample],
    tracker: &TrackerConfig,
    model: Arc<TrackerModel>,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let n = tracker.template_size;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let quad = current_quad(&s.h_in, n)?;
        let state = init_track(&s.reference_frame, &quad, tracker, model.clone())?;
        let (h, l_d) = match state.align(&s.tracked_frame, &s.h_in).and_then(|(h, _)| {
            let q = current_quad(&h, n)?;
            Ok((h, q))
        }) {
            Ok((h, q)) => {
                let pred = FourPointDisplacement {
                    d: std::array::from_fn(|k| [q.corners[k][0] - quad.corners[k][0], q.corners[k][1] - quad.corners[k][1]]),
                };
                let gt = FourPointDisplacement {
                    d: std::array::from_fn(|k| {
                        [s.gt_quad.corners[k][0] - quad.corners[k][0], s.gt_quad.corners[k][1] - quad.corners[k][1]]
                    }),
                };
                (h, loss_homography(&pred, &gt))
            }
            Err(_) => (s.h_in, f64::INFINITY),
        };
        let stats = state.statistics(&s.tracked_frame, &h)?;
        out.push((stats, l_d));
    }
    Ok(out)
}

/// Tracker settings with the learned head when `model` has one.
pub fn config_for(model: &TrackerModel, base: &TrackerConfig) -> TrackerConfig {
    let mut c = base.clone();
    c.head = if model.head.is_some() { HeadKind::Learned } else { HeadKind::Analytic };
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::PhotometricRanges;
    use crate::synthbench::{generate_pair, procedural_image, GeneratorConfig, OccluderConfig};

    fn small_sample(seed: u64, perturbation: f64) -> TrainingSample {
        let cfg = GeneratorConfig {
            image_size: 96,
            template_size: 48,
            levels: vec![12, 24, 48],
            perturbation,
            photometric: PhotometricRanges::NONE,
            occluders: OccluderConfig::NONE,
            ..GeneratorConfig::default()
        };
        generate_pair(&procedural_image(seed, 96, 96), &cfg, seed).unwrap()
    }

    #[test]
    fn level_example_targets_scale_with_level() {
        let s = small_sample(3, 6.0);
        let full = level_example(&s, 48, 1.0).unwrap();
        for (a, b) in full.disp.d.iter().zip(&s.gt_disp.d) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        let half = level_example(&s, 24, 0.5).unwrap();
        let k = level_scale(24, 48);
        for (a, b) in half.disp.d.iter().zip(&s.gt_disp.d) {
            assert!((a[0] - 0.5 * k * b[0]).abs() < 1e-9);
        }
        // Zero fraction: templates coincide up to resampling.
        let z = level_example(&s, 48, 0.0).unwrap();
        assert!(z.disp.max_abs() < 1e-9);
        let diff = z
            .reference
            .image
            .data()
            .iter()
            .zip(z.tracked.image.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / z.reference.image.data().len() as f64;
        assert!(diff < 0.04, "{diff}");
    }

    #[test]
    fn example_gradients_match_differences() {
        let s = small_sample(5, 3.0);
        let ex = level_example(&s, 12, 1.0).unwrap();
        let topo = Topology {
            widths: [2, 3, 3],
            features: 3,
            slope: 0.125,
        };
        let net = ConvNetWeights::random(topo, 1);
        let head = LearnedHead::init(2, 3, 0.5, 2);
        let w = LossWeights {
            lambda_d: 0.0,
            lambda_m: 1.0,
            lambda_v: 1.0,
        };
        let g = example_grads(&net, &head, &ex, &w).unwrap();
        let loss = |net: &ConvNetWeights, head: &LearnedHead| {
            let e = example_grads(net, head, &ex, &w).unwrap();
            loss_total(e.l_d, e.l_m, e.l_v, &w)
        };
        let step = 1e-6;
        let mut checked = 0;
        for i in (0..net.params.len()).step_by(7) {
            let (mut a, mut b) = (net.clone(), net.clone());
            a.params.data_mut()[i] += step;
            b.params.data_mut()[i] -= step;
            let fd = (loss(&a, &head) - loss(&b, &head)) / (2.0 * step);
            let tol = 1e-5 * (1.0 + fd.abs());
            if (fd - g.net[i]).abs() < tol {
                checked += 1;
            }
        }
        let total = (0..net.params.len()).step_by(7).count();
        assert!(checked == total, "{checked}/{total}");
        for i in 0..head.params.len() {
            let (mut a, mut b) = (head.clone(), head.clone());
            a.params.data_mut()[i] += step;
            b.params.data_mut()[i] -= step;
            let fd = (loss(&net, &a) - loss(&net, &b)) / (2.0 * step);
            assert!((fd - g.head[i]).abs() < 1e-5 * (1.0 + fd.abs()), "head {i}: {fd} vs {}", g.head[i]);
        }
    }

    #[test]
    fn short_training_reduces_loss() {
        let samples: Vec<_> = (0..6).map(|i| small_sample(20 + i, 6.0)).collect();
        let tracker = TrackerConfig {
            template_size: 48,
            levels: vec![12, 24, 48],
            ..TrackerConfig::default()
        };
        let cfg = MotionTrainConfig {
            epochs: 6,
            batch: 3,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            ..MotionTrainConfig::default()
        };
        let (model, log) = train_motion(&samples[..], &tracker, &cfg).unwrap();
        assert!(model.head.is_some());
        assert!(log.last().unwrap().total < log[0].total, "{log:?}");
        let (m2, log2) = train_motion(&samples[..], &tracker, &cfg).unwrap();
        assert_eq!(log, log2);
        assert_eq!(m2.head, model.head);
    }
}
