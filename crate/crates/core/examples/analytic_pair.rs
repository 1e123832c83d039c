//! Aligns one synthetic pair with the training-free analytic head and
//! reports alignment error and visibility IoU.

use std::sync::Arc;

use planartrack::synthbench::{generate_pair, metric_ae, procedural_image, GeneratorConfig};
use planartrack::tracking::{current_quad, init_track, TrackerConfig, TrackerModel};

fn main() -> planartrack::Result<()> {
    let g = GeneratorConfig {
        perturbation: 12.0,
        ..GeneratorConfig::default()
    };
    let cfg = TrackerConfig::default();
    let model = Arc::new(TrackerModel::analytic());
    for seed in 0..5 {
        let s = generate_pair(&procedural_image(100 + seed, 240, 240), &g, seed)?;
        let state = init_track(&s.reference_frame, &current_quad(&s.h_in, 120)?, &cfg, model.clone())?;
        let start = metric_ae(&current_quad(&s.h_in, 120)?, &s.gt_quad);
        let (h, vis) = state.align(&s.tracked_frame, &s.h_in)?;
        let ae = metric_ae(&current_quad(&h, 120)?, &s.gt_quad);
        let iou = vis.iou(s.gt_vis.last().expect("levels"));
        println!("pair {seed}: AE {start:6.2} -> {ae:5.2} px, visibility IoU {iou:.3}");
    }
    Ok(())
}
