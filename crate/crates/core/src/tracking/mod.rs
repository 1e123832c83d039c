//! The per-sequence tracking loop: coarse-to-fine surrogate updates,
//! feature-metric refinement, confidence scoring and reboots from older
//! confident estimates.

mod confidence;
pub mod train;

pub use confidence::{
    confidence_loss, confidence_score, reliability_label, roc_auc, train_confidence,
    ConfidenceHead, ConfidenceTrainConfig, LABEL_THRESHOLD,
};

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correlation::{build_cost_volume, cost_volume_statistics, CostVolume};
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_increment_from_cost_volume, estimate_increment_learned, refine, AnalyticConfig,
    IncrementEstimate, LearnedHead, VisibilityMask,
};
use crate::features::{
    extract, load_weights, network_input, save_weights, ConvNetWeights, Extractor, FeatureMap, NamedTensor,
};
use crate::geometry::{
    normalization_homography, recover_full_homography, surrogate_update, template_corners,
    Homography, Quad,
};
use crate::imaging::{level_scale, sample_planar_object_filtered, ImageBuffer, Mask, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Analytic,
    Learned,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(HeadKind::Analytic),
            "learned" => Ok(HeadKind::Learned),
            other => Err(Error::Config(format!("unknown head `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Full-resolution template side `W = H`.
    pub template_size: usize,
    /// Template sides, coarsest first.
    pub levels: Vec<usize>,
    pub d_max: usize,
    pub temperature: f64,
    /// Increment estimates per level per frame.
    pub inner_iterations: usize,
    pub refine_iterations: usize,
    pub confidence_threshold: f64,
    pub reboot_ages: Vec<usize>,
    pub buffer_capacity: usize,
    pub head: HeadKind,
    pub analytic: AnalyticConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            template_size: 120,
            levels: vec![30, 60, 120],
            d_max: 4,
            temperature: crate::correlation::DEFAULT_TEMPERATURE,
            inner_iterations: 1,
            refine_iterations: 3,
            confidence_threshold: 0.5,
            reboot_ages: vec![2, 4, 8, 16, 32, 60],
            buffer_capacity: 60,
            head: HeadKind::Analytic,
            analytic: AnalyticConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.template_size < 8 {
            return bad("template_size must be at least 8");
        }
        if self.levels.is_empty() || self.levels.iter().any(|&s| s < 8 || s > self.template_size) {
            return bad("levels must be non-empty, each in [8, template_size]");
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return bad("levels must be strictly increasing");
        }
        if self.d_max == 0 || !(self.temperature > 0.0) {
            return bad("d_max and temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must lie in [0, 1]");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive");
        }
        Ok(())
    }

    /// Number of cost-volume statistics fed to the confidence head.
    pub fn stats_len(&self) -> usize {
        crate::correlation::STATS_PER_LEVEL * self.levels.len()
    }
}

/// Weights shared by any number of track states.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModel {
    pub extractor: Extractor,
    pub head: Option<LearnedHead>,
    /// Without a head, every estimate is reported with confidence 1.
    pub confidence: Option<ConfidenceHead>,
}

impl TrackerModel {
    /// Fixed filter-bank features, analytic head, no confidence.
    pub fn analytic() -> Self {
        TrackerModel {
            extractor: Extractor::FilterBank,
            head: None,
            confidence: None,
        }
    }

    /// Tensors under the `features.`, `head.` and `confidence.` prefixes;
    /// the filter bank has no tensors.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut t = Vec::new();
        if let Extractor::ConvNet(w) = &self.extractor {
            t.extend(w.to_named("features."));
        }
        if let Some(h) = &self.head {
            t.extend(h.to_named("head."));
        }
        if let Some(c) = &self.confidence {
            t.extend(c.to_named("confidence."));
        }
        t
    }

    /// Inverse of [`TrackerModel::to_named`]. Missing `features.` tensors
    /// select the filter bank.
    pub fn from_named(tensors: &[NamedTensor]) -> Result<Self> {
        let has = |p: &str| tensors.iter().any(|t| t.name.starts_with(p));
        let extractor = if has("features.") {
            Extractor::ConvNet(Box::new(ConvNetWeights::from_named("features.", tensors)?))
        } else {
            Extractor::FilterBank
        };
        let head = has("head.").then(|| LearnedHead::from_named("head.", tensors)).transpose()?;
        let confidence = has("confidence.")
            .then(|| ConfidenceHead::from_named("confidence.", tensors))
            .transpose()?;
        Ok(TrackerModel {
            extractor,
            head,
            confidence,
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_weights(path, &self.to_named())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_named(&load_weights(path)?)
    }
}

/// A confident past estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferEntry {
    pub frame: usize,
    pub h_jn: Homography,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
struct LevelRef {
    size: usize,
    scale: Homography,
    template: Template,
    features: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct TrackState {
    pub config: TrackerConfig,
    model: Arc<TrackerModel>,
    levels: Vec<LevelRef>,
    full: LevelRef,
    refine_ref: FeatureMap,
    pub reference_quad: Quad,
    pub h_in: Homography,
    pub h_jn: Homography,
    pub buffer: VecDeque<BufferEntry>,
    /// Index of the last processed frame (the reference is frame 0).
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_index: usize,
    /// Current-frame to reference-frame homography.
    pub h_ij: Homography,
    /// Object quad in the current frame.
    pub quad: Quad,
    /// Visibility on the full-resolution reference template grid.
    pub vis: VisibilityMask,
    pub confidence: f64,
    pub reboot_count: usize,
    pub lost: bool,
}

fn refine_features(t: &Template) -> FeatureMap {
    let mut f = FeatureMap::from_tensor(&network_input(t), false);
    f.apply_mask(&t.valid);
    f
}

fn level_ref(frame: &ImageBuffer, h_in: &Homography, size: usize, full: usize, ex: &Extractor) -> Result<LevelRef> {
    let k = level_scale(size, full);
    let scale = Homography::scaling(k, k);
    let template = sample_planar_object_filtered(frame, &scale.compose(h_in), size)?;
    let features = extract(&template, ex)?;
    Ok(LevelRef {
        size,
        scale,
        template,
        features,
    })
}

/// Caches reference templates and features for every level.
pub fn init_track(
    reference_frame: &ImageBuffer,
    quad: &Quad,
    config: &TrackerConfig,
    model: Arc<TrackerModel>,
) -> Result<TrackState> {
    config.validate()?;
    quad.validate()?;
    let (fw, fh) = (reference_frame.width() as f64, reference_frame.height() as f64);
    let tol = 1e-6;
    if quad
        .corners
        .iter()
        .any(|p| p[0] < -tol || p[1] < -tol || p[0] > fw - 1.0 + tol || p[1] > fh - 1.0 + tol)
    {
        return Err(Error::QuadOutOfFrame);
    }
    if config.head == HeadKind::Learned {
        match &model.head {
            None => {
                return Err(Error::WeightTopologyMismatch(
                    "learned head selected but no head weights loaded".into(),
                ))
            }
            Some(h) if h.d_max != config.d_max => {
                return Err(Error::WeightTopologyMismatch(format!(
                    "head trained for d_max {}, config has {}",
                    h.d_max, config.d_max
                )))
            }
            _ => {}
        }
    }
    if let Some(c) = &model.confidence {
        if c.inputs != config.stats_len() {
            return Err(Error::WeightTopologyMismatch(format!(
                "confidence head takes {} statistics, config produces {}",
                c.inputs,
                config.stats_len()
            )));
        }
    }
    let n = config.template_size;
    let h_in = normalization_homography(quad, n, n)?;
    let levels = config
        .levels
        .iter()
        .map(|&s| level_ref(reference_frame, &h_in, s, n, &model.extractor))
        .collect::<Result<Vec<_>>>()?;
    let full = match levels.last() {
        Some(l) if l.size == n => l.clone(),
        _ => level_ref(reference_frame, &h_in, n, n, &model.extractor)?,
    };
    let refine_ref = refine_features(&full.template);
    let mut buffer = VecDeque::with_capacity(config.buffer_capacity);
    buffer.push_back(BufferEntry {
        frame: 0,
        h_jn: h_in,
        confidence: 1.0,
    });
    Ok(TrackState {
        config: config.clone(),
        model,
        levels,
        full,
        refine_ref,
        reference_quad: *quad,
        h_in,
        h_jn: h_in,
        buffer,
        frame_index: 0,
    })
}

/// Confident entries at (nearest available to) each requested age,
/// deduplicated, youngest first.
pub fn reboot_candidates(
    buffer: &VecDeque<BufferEntry>,
    current_frame: usize,
    ages: &[usize],
) -> Vec<BufferEntry> {
    let mut out: Vec<BufferEntry> = Vec::new();
    for &age in ages {
        let target = current_frame as i64 - age as i64;
        let Some(best) = buffer
            .iter()
            .min_by_key(|e| ((e.frame as i64 - target).abs(), std::cmp::Reverse(e.frame)))
        else {
            continue;
        };
        if !out.iter().any(|e| e.frame == best.frame) {
            out.push(*best);
        }
    }
    out.sort_by_key(|e| std::cmp::Reverse(e.frame));
    out
}

/// Outcome of one alignment attempt from a given start.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub h_jn: Homography,
    pub vis: VisibilityMask,
    pub stats: Vec<f64>,
    pub confidence: f64,
}

impl TrackState {
    pub fn model(&self) -> &TrackerModel {
        &self.model
    }

    fn increment(&self, lr: &LevelRef, cv: &CostVolume) -> Result<IncrementEstimate> {
        match self.config.head {
            HeadKind::Analytic => estimate_increment_from_cost_volume(
                cv,
                self.config.temperature,
                &lr.template.valid,
                &self.config.analytic,
            ),
            HeadKind::Learned => {
                let head = self.model.head.as_ref().ok_or_else(|| {
                    Error::WeightTopologyMismatch("no learned head loaded".into())
                })?;
                estimate_increment_learned(cv, head)
            }
        }
    }

    fn level_cost_volume(&self, lr: &LevelRef, frame: &ImageBuffer, h: &Homography) -> Result<CostVolume> {
        let t = sample_planar_object_filtered(frame, &lr.scale.compose(h), lr.size)?;
        let f_t = extract(&t, &self.model.extractor)?;
        build_cost_volume(&lr.features, &f_t, self.config.d_max)
    }

    /// Coarse-to-fine increments followed by refinement. Visibility is that
    /// of the last increment; statistics are not computed.
    pub fn align(&self, frame: &ImageBuffer, start: &Homography) -> Result<(Homography, VisibilityMask)> {
        self.align_with(frame, start, true)
    }

    /// [`TrackState::align`] with refinement optionally disabled.
    pub fn align_with(
        &self,
        frame: &ImageBuffer,
        start: &Homography,
        with_refine: bool,
    ) -> Result<(Homography, VisibilityMask)> {
        let mut h = *start;
        let mut vis = None;
        for lr in &self.levels {
            for _ in 0..self.config.inner_iterations.max(1) {
                let cv = self.level_cost_volume(lr, frame, &h)?;
                let est = self.increment(lr, &cv)?;
                let s_inv = lr.scale.invert()?;
                let h_s = s_inv.compose(&est.surrogate()?).compose(&lr.scale);
                h = surrogate_update(&h, &h_s);
                vis = Some(est.vis);
            }
        }
        let n = self.config.template_size;
        let mut mask = match vis {
            Some(v) if v.width == n => v,
            _ => VisibilityMask::from_mask(&self.full.template.valid),
        };
        if with_refine {
            for v in mask.values.iter_mut().zip(&self.full.template.valid.data) {
                if !*v.1 {
                    *v.0 = 0.0;
                }
            }
            for _ in 0..self.config.refine_iterations {
                let t = sample_planar_object_filtered(frame, &h, n)?;
                let est = refine(&self.refine_ref, &refine_features(&t), Some(&mask))?;
                if est.disp.max_abs() < 1e-4 {
                    break;
                }
                h = surrogate_update(&h, &est.surrogate()?);
            }
        }
        Ok((h, mask))
    }

    /// Visibility and cost-volume statistics of a candidate alignment.
    pub fn assess(&self, frame: &ImageBuffer, h: &Homography) -> Result<(VisibilityMask, Vec<f64>)> {
        let want_stats = self.model.confidence.is_some();
        let mut cvs = Vec::new();
        let mut full_cv = None;
        for lr in &self.levels {
            if !want_stats && lr.size != self.full.size {
                continue;
            }
            let cv = self.level_cost_volume(lr, frame, h)?;
            if lr.size == self.full.size {
                full_cv = Some(cv.clone());
            }
            cvs.push(cv);
        }
        let full_cv = match full_cv {
            Some(cv) => cv,
            None => self.level_cost_volume(&self.full, frame, h)?,
        };
        let n = self.full.size;
        let vis = match self.increment(&self.full, &full_cv) {
            Ok(est) => est.vis,
            Err(Error::InsufficientSupport { .. }) | Err(Error::DegenerateQuad(_)) => {
                VisibilityMask::filled(n, n, 0.0)
            }
            Err(e) => return Err(e),
        };
        let stats = if want_stats {
            cost_volume_statistics(&cvs, self.config.temperature)
        } else {
            Vec::new()
        };
        Ok((vis, stats))
    }

    /// Cost-volume statistics at `h` over all pyramid levels, whether or
    /// not a confidence head is loaded.
    pub fn statistics(&self, frame: &ImageBuffer, h: &Homography) -> Result<Vec<f64>> {
        let cvs = self
            .levels
            .iter()
            .map(|lr| self.level_cost_volume(lr, frame, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(cost_volume_statistics(&cvs, self.config.temperature))
    }

    /// Full attempt: align, validate the quad, assess and score.
    pub fn attempt(&self, frame: &ImageBuffer, start: &Homography) -> Result<Alignment> {
        let (h, _) = self.align(frame, start)?;
        current_quad(&h, self.config.template_size)?;
        let (vis, stats) = self.assess(frame, &h)?;
        let confidence = match &self.model.confidence {
            Some(c) => c.score(&stats)?,
            None => 1.0,
        };
        Ok(Alignment {
            h_jn: h,
            vis,
            stats,
            confidence,
        })
    }

    fn push_confident(&mut self, entry: BufferEntry) {
        if self.buffer.len() == self.config.buffer_capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(entry);
    }
}

/// Quad whose normalization is `h_jn`.
pub fn current_quad(h_jn: &Homography, template_size: usize) -> Result<Quad> {
    let inv = h_jn.invert()?;
    let c = template_corners(template_size, template_size);
    let mut out = [[0.0; 2]; 4];
    for (o, p) in out.iter_mut().zip(c) {
        *o = inv.try_apply(p)?;
    }
    Quad::new(out)
}

/// Tracks the next frame, rebooting from older confident estimates when
/// the first attempt is unreliable. When every candidate fails the result
/// is flagged lost and carries the last confident estimate.
pub fn track_frame(state: &mut TrackState, frame: &ImageBuffer) -> Result<FrameResult> {
    state.frame_index += 1;
    let thr = state.config.confidence_threshold;
    let mut best_conf = 0.0f64;
    let mut reboots = 0;
    let mut accepted = None;
    if let Ok(a) = state.attempt(frame, &state.h_jn) {
        best_conf = best_conf.max(a.confidence);
        if a.confidence >= thr {
            accepted = Some(a);
        }
    }
    if accepted.is_none() {
        let cands = reboot_candidates(&state.buffer, state.frame_index, &state.config.reboot_ages);
        for c in cands {
            reboots += 1;
            if let Ok(a) = state.attempt(frame, &c.h_jn) {
                best_conf = best_conf.max(a.confidence);
                if a.confidence >= thr {
                    accepted = Some(a);
                    break;
                }
            }
        }
    }
    let n = state.config.template_size;
    let (vis, confidence, lost) = match accepted {
        Some(a) => {
            state.h_jn = a.h_jn;
            state.push_confident(BufferEntry {
                frame: state.frame_index,
                h_jn: a.h_jn,
                confidence: a.confidence,
            });
            (a.vis, a.confidence, false)
        }
        None => (VisibilityMask::filled(n, n, 0.0), best_conf.min(thr), true),
    };
    let confidence = if lost && confidence >= thr {
        thr * 0.999
    } else {
        confidence
    };
    Ok(FrameResult {
        frame_index: state.frame_index,
        h_ij: recover_full_homography(&state.h_in, &state.h_jn)?,
        quad: current_quad(&state.h_jn, n)?,
        vis,
        confidence,
        reboot_count: reboots,
        lost,
    })
}

/// Mask of the reference template valid region at full resolution.
pub fn reference_valid(state: &TrackState) -> &Mask {
    &state.full.template.valid
}
