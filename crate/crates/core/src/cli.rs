//! Library side of the command-line tool: one function per subcommand.
//! The binary only parses arguments and calls these.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{normalization_homography, Homography, Quad};
use crate::imaging::{composite, load_image, save_image, save_mask_png, ImageBuffer, VisibilityMask};
use crate::synthbench::{
    empirical_cdf, generate_pair_named, load_sample, procedural_image, read_annotations, read_manifest,
    read_results, write_curve_csv, write_results, DatasetWriter, ResultRecord, Split,
};
use crate::synthbench::{sequence_errors_with, success_rate_at5};
use crate::tracking::train::{collect_confidence_data, train_motion, DiskSamples, EpochLog};
use crate::tracking::{
    init_track, reference_valid, reliability_label, roc_auc, track_frame, train_confidence, HeadKind,
    TrackerModel,
};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "ppm", "pgm", "pnm", "pbm"];

/// Image files of a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Parses eight whitespace- or comma-separated numbers into a quad.
pub fn parse_quad(text: &str) -> Result<Quad> {
    let v: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::parse(1, format!("{t}: {e}"))))
        .collect::<Result<_>>()?;
    let a: [f64; 8] = v
        .try_into()
        .map_err(|v: Vec<f64>| Error::parse(1, format!("quad needs 8 numbers, got {}", v.len())))?;
    Quad::from_array(a)
}

/// First ground-truth quad of an annotation file.
pub fn initial_quad(annotations: &Path) -> Result<Quad> {
    read_annotations(annotations)?
        .frames
        .first()
        .and_then(|f| f.1)
        .ok_or_else(|| Error::parse(1, "annotation has no quad for the first frame"))
}

/// Writes `pairs` samples to `out_dir`, interleaving train/val/test 5:1:1.
/// Sources cycle through the corpus images; without a corpus each pair
/// gets its own procedural image.
pub fn cmd_generate(corpus_dir: Option<&Path>, out_dir: &Path, cfg: &Config) -> Result<usize> {
    let corpus = match corpus_dir {
        Some(d) => {
            let c = list_images(d)?;
            if c.is_empty() {
                return Err(Error::DegenerateDataset(format!("no images in {}", d.display())));
            }
            c
        }
        None => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = DatasetWriter::create(out_dir)?;
    let size = cfg.generator.image_size;
    for i in 0..cfg.dataset.pairs {
        let seed: u64 = rng.gen();
        let (source, id) = if corpus.is_empty() {
            let s: u64 = rng.gen();
            (procedural_image(s, size, size), format!("procedural:{s}"))
        } else {
            let p = &corpus[i % corpus.len()];
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            (load_image(p)?, name)
        };
        let sample = generate_pair_named(&source, &id, &cfg.generator, seed)?;
        w.push(Split::of_index(i), &sample)?;
    }
    w.finish()
}

/// What `train` did, printed as JSON by the binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub head: HeadKind,
    pub train_pairs: usize,
    pub epochs: Vec<EpochLog>,
    pub confidence_pairs: usize,
    pub reliable_fraction: f64,
    /// Training-set ROC-AUC of the confidence head, when one was trained.
    pub confidence_auc: Option<f64>,
}

/// Two phases: motion (feature network and learned head, skipped for the
/// analytic head), then confidence on freshly generated pairs labeled by
/// tracking them with the phase-one model. Writes one weight file.
pub fn cmd_train(dataset_dir: &Path, out_weights: &Path, cfg: &Config) -> Result<TrainReport> {
    cfg.validate()?;
    let records: Vec<_> = read_manifest(dataset_dir)?
        .into_iter()
        .filter(|r| r.split == Split::Train)
        .collect();
    if records.is_empty() {
        return Err(Error::DegenerateDataset("no training split in the archive".into()));
    }
    let train_pairs = records.len();
    let disk = DiskSamples {
        dir: dataset_dir.to_path_buf(),
        records,
    };
    let (mut model, epochs) = match cfg.tracker.head {
        HeadKind::Learned => train_motion(&disk, &cfg.tracker, &cfg.train)?,
        HeadKind::Analytic => (TrackerModel::analytic(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_c0de);
    let model_arc = Arc::new(model.clone());
    let mut data = Vec::with_capacity(cfg.dataset.confidence_pairs);
    for i in 0..cfg.dataset.confidence_pairs {
        let rec = &disk.records[i % disk.records.len()];
        let source = load_sample(dataset_dir, rec)?.reference_frame;
        let mut g = cfg.generator.clone();
        if i % 2 == 0 {
            g.perturbation = cfg.dataset.confidence_easy_perturbation;
            g.occluders = crate::synthbench::OccluderConfig::NONE;
        }
        let pair = generate_pair_named(&source, &rec.provenance.source_id, &g, rng.gen())?;
        let got = collect_confidence_data(std::slice::from_ref(&pair), &cfg.tracker, model_arc.clone())?;
        data.extend(got.into_iter().map(|(s, l_d)| (s, reliability_label(l_d))));
    }
    let reliable_fraction = if data.is_empty() {
        0.0
    } else {
        data.iter().map(|d| d.1).sum::<f64>() / data.len() as f64
    };
    let mut confidence_auc = None;
    match train_confidence(&data, &cfg.confidence) {
        Ok(head) => {
            let scores = data.iter().map(|(s, _)| head.score(s)).collect::<Result<Vec<_>>>()?;
            let labels: Vec<f64> = data.iter().map(|d| d.1).collect();
            confidence_auc = Some(roc_auc(&scores, &labels));
            model.confidence = Some(head);
        }
        // Without both classes there is nothing to learn; keep confidence 1.
        Err(Error::DegenerateDataset(_)) => {}
        Err(e) => return Err(e),
    }
    if let Some(dir) = out_weights.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    model.save(out_weights)?;
    Ok(TrainReport {
        head: cfg.tracker.head,
        train_pairs,
        epochs,
        confidence_pairs: data.len(),
        reliable_fraction,
        confidence_auc,
    })
}

/// Model for tracking: the weight file when given, otherwise the analytic
/// model. The learned head requires weights carrying one.
pub fn load_model(weights: Option<&Path>, cfg: &Config) -> Result<TrackerModel> {
    let model = match weights {
        Some(p) => TrackerModel::load(p)?,
        None => TrackerModel::analytic(),
    };
    if cfg.tracker.head == HeadKind::Learned && model.head.is_none() {
        return Err(Error::WeightTopologyMismatch(
            "--head learned needs a weight file with head tensors".into(),
        ));
    }
    Ok(model)
}

/// Tracks the frames of `frames_dir` (sorted by name, the first is the
/// reference) and writes `results.txt` plus `vis/NNNNNN.png` per frame.
pub fn cmd_track(
    frames_dir: &Path,
    init_quad: &Quad,
    weights: Option<&Path>,
    cfg: &Config,
    out_dir: &Path,
) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let frames = list_images(frames_dir)?;
    let Some(first) = frames.first() else {
        return Err(Error::DegenerateDataset(format!("no frames in {}", frames_dir.display())));
    };
    let model = Arc::new(load_model(weights, cfg)?);
    let vis_dir = out_dir.join("vis");
    fs::create_dir_all(&vis_dir).map_err(|e| Error::io(&vis_dir, e))?;
    let mut state = init_track(&load_image(first)?, init_quad, &cfg.tracker, model)?;
    let mut records = vec![ResultRecord {
        frame_index: 0,
        h_ij: Homography::IDENTITY,
        confidence: 1.0,
        lost: false,
    }];
    save_mask_png(vis_dir.join("000000.png"), &VisibilityMask::from_mask(reference_valid(&state)))?;
    for (i, path) in frames.iter().enumerate().skip(1) {
        let r = track_frame(&mut state, &load_image(path)?)?;
        save_mask_png(vis_dir.join(format!("{i:06}.png")), &r.vis)?;
        records.push(ResultRecord {
            frame_index: r.frame_index,
            h_ij: r.h_ij,
            confidence: r.confidence,
            lost: r.lost,
        });
    }
    write_results(out_dir.join("results.txt"), &records)?;
    Ok(records)
}

/// Summary numbers written to `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub ae_mean: f64,
    pub ae_median: f64,
    pub hd_mean: f64,
    pub hd_median: f64,
    pub success_rate_at5: f64,
    pub lost_frames: usize,
}

fn mean_median(v: &[Option<f64>]) -> (f64, f64) {
    let mut x: Vec<f64> = v.iter().flatten().copied().collect();
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len();
    let med = if n % 2 == 1 { x[n / 2] } else { 0.5 * (x[n / 2 - 1] + x[n / 2]) };
    (x.iter().sum::<f64>() / n as f64, med)
}

/// Writes `summary.csv`, `precision.csv` (AE) and `success.csv` (HD).
/// Reads no pixels.
pub fn cmd_eval(results: &Path, annotations: &Path, cfg: &Config, out_dir: &Path) -> Result<EvalSummary> {
    let recs = read_results(results)?;
    let ann = read_annotations(annotations)?;
    let errors = sequence_errors_with(&recs, &ann, cfg.eval.ae_averaging, cfg.eval.hd_averaging)?;
    let (ae_mean, ae_median) = mean_median(&errors.ae);
    let (hd_mean, hd_median) = mean_median(&errors.hd);
    let summary = EvalSummary {
        frames: recs.len(),
        ae_mean,
        ae_median,
        hd_mean,
        hd_median,
        success_rate_at5: success_rate_at5(&errors),
        lost_frames: recs.iter().filter(|r| r.lost).count(),
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let t = cfg.eval.thresholds();
    write_curve_csv(out_dir.join("precision.csv"), &empirical_cdf(&errors.ae, &t))?;
    write_curve_csv(out_dir.join("success.csv"), &empirical_cdf(&errors.hd, &t))?;
    let mut s = String::from("metric,value\n");
    for (k, v) in [
        ("frames", summary.frames as f64),
        ("ae_mean", summary.ae_mean),
        ("ae_median", summary.ae_median),
        ("hd_mean", summary.hd_mean),
        ("hd_median", summary.hd_median),
        ("success_rate_at5", summary.success_rate_at5),
        ("lost_frames", summary.lost_frames as f64),
    ] {
        let _ = writeln!(s, "{k},{v}");
    }
    let path = out_dir.join("summary.csv");
    fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Pastes `overlay` onto the tracked plane of every frame with a result.
/// Visibility masks come from `vis_dir` (as written by [`cmd_track`]) when
/// given, otherwise the whole plane is treated as visible.
pub fn cmd_composite(
    frames_dir: &Path,
    results: &Path,
    overlay: &Path,
    init_quad: &Quad,
    vis_dir: Option<&Path>,
    cfg: &Config,
    out_dir: &Path,
) -> Result<usize> {
    let frames = list_images(frames_dir)?;
    let recs = read_results(results)?;
    let overlay: ImageBuffer = load_image(overlay)?;
    let n = cfg.tracker.template_size;
    let h_in = normalization_homography(init_quad, n, n)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = 0;
    for r in &recs {
        let Some(path) = frames.get(r.frame_index) else {
            return Err(Error::LengthMismatch {
                left: r.frame_index,
                right: frames.len(),
            });
        };
        let vis = match vis_dir {
            Some(d) => crate::imaging::load_mask_png(d.join(format!("{:06}.png", r.frame_index)))?,
            None => VisibilityMask::filled(n, n, 1.0),
        };
        let out = composite(&load_image(path)?, &overlay, &h_in, &r.h_ij, &vis)?;
        save_image(out_dir.join(format!("{:06}.png", r.frame_index)), &out)?;
        written += 1;
    }
    Ok(written)
}
