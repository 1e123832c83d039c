//! Tracks a synthetic sequence with a five-frame full occlusion. The
//! confidence head flags the occluded frames, the tracker reboots from
//! buffered estimates and picks the object up again afterwards.

use std::sync::Arc;

use planartrack::synthbench::{generate_pair, generate_sequence, metric_ae, procedural_image, GeneratorConfig, OccluderConfig, SequenceConfig};
use planartrack::tracking::train::collect_confidence_data;
use planartrack::tracking::{
    init_track, reliability_label, track_frame, train_confidence, ConfidenceTrainConfig, TrackerConfig, TrackerModel,
};

fn main() -> planartrack::Result<()> {
    let cfg = TrackerConfig::default();
    let analytic = Arc::new(TrackerModel::analytic());
    let mut data = Vec::new();
    for i in 0..60u64 {
        let mut g = GeneratorConfig::default();
        if i % 2 == 0 {
            g.perturbation = 8.0;
            g.occluders = OccluderConfig::NONE;
        }
        let s = generate_pair(&procedural_image(i, 240, 240), &g, i)?;
        data.extend(collect_confidence_data(&[s], &cfg, analytic.clone())?.into_iter().map(|(s, l)| (s, reliability_label(l))));
    }
    let model = TrackerModel {
        confidence: Some(train_confidence(&data, &ConfidenceTrainConfig::default())?),
        ..TrackerModel::analytic()
    };

    let seq_cfg = SequenceConfig {
        frames: 20,
        max_translation: 2.0,
        occlusion: Some((8, 5)),
        ..SequenceConfig::default()
    };
    let seq = generate_sequence(&procedural_image(77, 240, 240), &seq_cfg, 5)?;
    let mut state = init_track(&seq.frames[0], &seq.quads[0], &cfg, Arc::new(model))?;
    for t in 1..seq.frames.len() {
        let r = track_frame(&mut state, &seq.frames[t])?;
        println!(
            "frame {t:2}: AE {:5.2} px  confidence {:.2}  reboots {}{}",
            metric_ae(&r.quad, &seq.quads[t]),
            r.confidence,
            r.reboot_count,
            if r.lost { "  lost" } else { "" }
        );
    }
    Ok(())
}
