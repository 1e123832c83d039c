//! Runs the analytic tracker over a few synthetic sequences and prints the
//! benchmark metrics: AE/HD summaries and precision/success curves.

use std::sync::Arc;

use planartrack::synthbench::{
    generate_sequence, precision_curve, procedural_image, sequence_errors, success_curve, success_rate_at5,
    ResultRecord, SequenceConfig,
};
use planartrack::tracking::{init_track, track_frame, TrackerConfig, TrackerModel};
use planartrack::geometry::Homography;

fn main() -> planartrack::Result<()> {
    let cfg = TrackerConfig::default();
    let model = Arc::new(TrackerModel::analytic());
    let thresholds: Vec<f64> = (0..=20).map(f64::from).collect();
    for seed in 0..3u64 {
        let seq = generate_sequence(&procedural_image(seed, 240, 240), &SequenceConfig::default(), seed)?;
        let mut state = init_track(&seq.frames[0], &seq.quads[0], &cfg, model.clone())?;
        let mut results = vec![ResultRecord {
            frame_index: 0,
            h_ij: Homography::IDENTITY,
            confidence: 1.0,
            lost: false,
        }];
        for frame in &seq.frames[1..] {
            let r = track_frame(&mut state, frame)?;
            results.push(ResultRecord {
                frame_index: r.frame_index,
                h_ij: r.h_ij,
                confidence: r.confidence,
                lost: r.lost,
            });
        }
        let errors = sequence_errors(&results, &seq.annotation())?;
        let precision = precision_curve(&errors, &thresholds);
        let success = success_curve(&errors, &thresholds);
        println!(
            "sequence {seed}: SR@5 {:.2}, precision@2 {:.2}, success@2 {:.2}",
            success_rate_at5(&errors),
            precision[2].1,
            success[2].1
        );
    }
    Ok(())
}
