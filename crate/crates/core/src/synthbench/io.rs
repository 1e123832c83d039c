//! Text formats (annotations, results, curves) and the sample archive.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Provenance, TrainingSample};
use crate::error::{Error, Result};
use crate::geometry::{FourPointDisplacement, Homography, Quad};
use crate::imaging::{load_image, load_mask_png, sample_planar_object_filtered, save_image, save_mask_png};

/// Per-frame ground-truth quads; `None` marks absent ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceAnnotation {
    pub frames: Vec<(usize, Option<Quad>)>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn floats(tokens: &[&str], line: usize) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::parse(line, format!("bad number {t:?}: {e}")))
        })
        .collect()
}

fn index(token: &str, line: usize) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|e| Error::parse(line, format!("bad frame index {token:?}: {e}")))
}

/// Parses `frame_index x1 y1 x2 y2 x3 y3 x4 y4` or `frame_index -` lines.
/// Blank lines and `#` comments are skipped; indices must be contiguous.
pub fn parse_annotations(text: &str) -> Result<SequenceAnnotation> {
    let mut frames = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tok: Vec<&str> = body.split_whitespace().collect();
        let idx = index(tok[0], line)?;
        if let Some((prev, _)) = frames.last() {
            if idx != prev + 1 {
                return Err(Error::parse(line, format!("frame {idx} follows frame {prev}")));
            }
        }
        let quad = match &tok[1..] {
            ["-"] => None,
            rest if rest.len() == 8 => {
                let v = floats(rest, line)?;
                Some(
                    Quad::from_array(std::array::from_fn(|k| v[k]))
                        .map_err(|e| Error::parse(line, e.to_string()))?,
                )
            }
            rest => {
                return Err(Error::parse(
                    line,
                    format!("expected 8 coordinates or '-', found {} fields", rest.len()),
                ))
            }
        };
        frames.push((idx, quad));
    }
    Ok(SequenceAnnotation { frames })
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<SequenceAnnotation> {
    parse_annotations(&read_text(path.as_ref())?)
}

pub fn format_annotations(ann: &SequenceAnnotation) -> String {
    let mut s = String::new();
    for (idx, q) in &ann.frames {
        match q {
            Some(q) => {
                let a = q.to_array();
                let _ = writeln!(s, "{idx} {} {} {} {} {} {} {} {}", a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7]);
            }
            None => {
                let _ = writeln!(s, "{idx} -");
            }
        }
    }
    s
}

pub fn write_annotations(path: impl AsRef<Path>, ann: &SequenceAnnotation) -> Result<()> {
    write_text(path.as_ref(), &format_annotations(ann))
}

/// One line of a results file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRecord {
    pub frame_index: usize,
    pub h_ij: Homography,
    pub confidence: f64,
    pub lost: bool,
}

/// `frame_index h11 ... h33 confidence lost_flag` lines.
pub fn format_results(records: &[ResultRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{} {} {} {}", r.frame_index, r.h_ij, r.confidence, u8::from(r.lost));
    }
    s
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let tok: Vec<&str> = body.split_whitespace().collect();
        if tok.len() != 12 {
            return Err(Error::parse(line, format!("expected 12 fields, found {}", tok.len())));
        }
        let frame_index = index(tok[0], line)?;
        let v = floats(&tok[1..11], line)?;
        let m = [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
        let h_ij = Homography::from_matrix(m).map_err(|e| Error::parse(line, e.to_string()))?;
        let lost = match tok[11] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line, format!("lost flag must be 0 or 1, got {other:?}"))),
        };
        out.push(ResultRecord {
            frame_index,
            h_ij,
            confidence: v[9],
            lost,
        });
    }
    Ok(out)
}

pub fn write_results(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    write_text(path.as_ref(), &format_results(records))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    parse_results(&read_text(path.as_ref())?)
}

/// `threshold,fraction` CSV with a header line.
pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in curve {
        let _ = writeln!(s, "{t},{f}");
    }
    write_text(path.as_ref(), &s)
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let text = read_text(path.as_ref())?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate().skip(1) {
        if l.trim().is_empty() {
            continue;
        }
        let v = floats(&l.split(',').collect::<Vec<_>>(), i + 1)?;
        if v.len() != 2 {
            return Err(Error::parse(i + 1, "expected threshold,fraction"));
        }
        out.push((v[0], v[1]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 5:1:1 interleaved by sample index.
    pub fn of_index(i: usize) -> Split {
        match i % 7 {
            0..=4 => Split::Train,
            5 => Split::Val,
            _ => Split::Test,
        }
    }
}

/// Manifest line of a sample archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub index: usize,
    pub split: Split,
    pub template_size: usize,
    pub levels: Vec<usize>,
    pub h_in: [f64; 9],
    pub h_ij: [f64; 9],
    pub gt_quad: [f64; 8],
    pub gt_disp: [f64; 8],
    pub provenance: Provenance,
    pub reference_frame: String,
    pub tracked_frame: String,
    pub reference: String,
    pub tracked: String,
    pub visibility: Vec<String>,
}

fn hom(a: [f64; 9]) -> Result<Homography> {
    Homography::from_matrix([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
}

/// Streams samples to disk: PNG frames, templates and masks, plus a
/// `manifest.jsonl` written by [`DatasetWriter::finish`].
pub struct DatasetWriter {
    dir: std::path::PathBuf,
    manifest: String,
    count: usize,
}

impl DatasetWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(DatasetWriter {
            dir,
            manifest: String::new(),
            count: 0,
        })
    }

    pub fn push(&mut self, split: Split, s: &TrainingSample) -> Result<()> {
        let i = self.count;
        let name = |what: &str| format!("{i:06}_{what}.png");
        let levels: Vec<usize> = s.gt_vis.iter().map(|v| v.width).collect();
        let rec = DatasetRecord {
            index: i,
            split,
            template_size: s.reference.size(),
            levels: levels.clone(),
            h_in: s.h_in.to_array(),
            h_ij: s.h_ij.to_array(),
            gt_quad: s.gt_quad.to_array(),
            gt_disp: s.gt_disp.to_array(),
            provenance: s.provenance.clone(),
            reference_frame: name("frame_ref"),
            tracked_frame: name("frame_trk"),
            reference: name("ref"),
            tracked: name("trk"),
            visibility: levels.iter().map(|l| name(&format!("vis{l}"))).collect(),
        };
        let dir = &self.dir;
        save_image(dir.join(&rec.reference_frame), &s.reference_frame)?;
        save_image(dir.join(&rec.tracked_frame), &s.tracked_frame)?;
        save_image(dir.join(&rec.reference), &s.reference.image)?;
        save_image(dir.join(&rec.tracked), &s.tracked.image)?;
        for (f, v) in rec.visibility.iter().zip(&s.gt_vis) {
            save_mask_png(dir.join(f), v)?;
        }
        self.manifest.push_str(&serde_json::to_string(&rec)?);
        self.manifest.push('\n');
        self.count += 1;
        Ok(())
    }

    /// Writes the manifest; returns the number of samples.
    pub fn finish(self) -> Result<usize> {
        write_text(&self.dir.join("manifest.jsonl"), &self.manifest)?;
        Ok(self.count)
    }
}

/// Writes a whole archive at once.
pub fn save_dataset(dir: impl AsRef<Path>, samples: &[(Split, TrainingSample)]) -> Result<()> {
    let mut w = DatasetWriter::create(dir)?;
    for (split, s) in samples {
        w.push(*split, s)?;
    }
    w.finish().map(|_| ())
}

/// Manifest records of an archive, without pixels.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let text = read_text(&dir.as_ref().join("manifest.jsonl"))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::parse(i + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Loads one sample. Templates are resampled from the stored frames.
pub fn load_sample(dir: impl AsRef<Path>, rec: &DatasetRecord) -> Result<TrainingSample> {
    let dir = dir.as_ref();
    let reference_frame = load_image(dir.join(&rec.reference_frame))?;
    let tracked_frame = load_image(dir.join(&rec.tracked_frame))?;
    let h_in = hom(rec.h_in)?;
    let n = rec.template_size;
    let gt_vis = rec
        .visibility
        .iter()
        .map(|f| load_mask_png(dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSample {
        reference: sample_planar_object_filtered(&reference_frame, &h_in, n)?,
        tracked: sample_planar_object_filtered(&tracked_frame, &h_in, n)?,
        reference_frame,
        tracked_frame,
        h_in,
        h_ij: hom(rec.h_ij)?,
        gt_quad: Quad::from_array(rec.gt_quad)?,
        gt_disp: FourPointDisplacement::from_array(rec.gt_disp),
        gt_vis,
        provenance: rec.provenance.clone(),
    })
}

/// Reads a whole archive into memory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<(DatasetRecord, TrainingSample)>> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .into_iter()
        .map(|rec| {
            let s = load_sample(dir, &rec)?;
            Ok((rec, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn annotation_examples() {
        assert_eq!(parse_annotations("").unwrap().frames.len(), 0);
        let a = parse_annotations("0 10 10 110 10 110 110 10 110\n").unwrap();
        assert_eq!(a.frames, vec![(0, Some(Quad::axis_aligned(10.0, 10.0, 110.0, 110.0).unwrap()))]);
        let b = parse_annotations("0 10 10 110 10 110 110 10 110\n1 -\n").unwrap();
        assert_eq!(b.frames[1], (1, None));
        match parse_annotations("0 1 2 3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match parse_annotations("0 -\n2 -\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn results_roundtrip() {
        let h = Homography::from_matrix([[1.01, 0.02, 3.5], [-0.01, 0.99, -2.25], [1e-5, -2e-5, 1.0]]).unwrap();
        let recs = vec![
            ResultRecord { frame_index: 0, h_ij: Homography::IDENTITY, confidence: 1.0, lost: false },
            ResultRecord { frame_index: 1, h_ij: h, confidence: 0.3141, lost: true },
        ];
        assert_eq!(parse_results(&format_results(&recs)).unwrap(), recs);
        assert!(matches!(parse_results("0 1 0 0 0 1 0 0 0 1 0.5 2"), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn annotation_roundtrip(
            quads in proptest::collection::vec(
                proptest::option::of((0.0f64..50.0, 0.0f64..50.0, 20.0f64..80.0, 20.0f64..80.0)), 0..20)
        ) {
            let ann = SequenceAnnotation {
                frames: quads
                    .iter()
                    .enumerate()
                    .map(|(i, q)| (i, q.map(|(x, y, w, h)| Quad::axis_aligned(x, y, x + w, y + h).unwrap())))
                    .collect(),
            };
            prop_assert_eq!(parse_annotations(&format_annotations(&ann)).unwrap(), ann);
        }
    }
}
