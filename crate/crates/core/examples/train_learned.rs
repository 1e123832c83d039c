//! Trains the feature network and learned head on a small synthetic set,
//! saves the weights and compares against the analytic head.
//!
//! `cargo run --release --example train_learned [PAIRS]`

use std::sync::Arc;

use planartrack::features::AdamConfig;
use planartrack::synthbench::{generate_pair, metric_ae, procedural_image, GeneratorConfig};
use planartrack::tracking::train::{train_motion, MotionTrainConfig};
use planartrack::tracking::{current_quad, init_track, HeadKind, TrackerConfig, TrackerModel};

fn median_ae(model: Arc<TrackerModel>, cfg: &TrackerConfig, test: &[planartrack::synthbench::TrainingSample]) -> f64 {
    let mut ae: Vec<f64> = test
        .iter()
        .map(|s| {
            let st = init_track(&s.reference_frame, &current_quad(&s.h_in, 120).unwrap(), cfg, model.clone()).unwrap();
            match st.align(&s.tracked_frame, &s.h_in) {
                Ok((h, _)) => metric_ae(&current_quad(&h, 120).unwrap(), &s.gt_quad),
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    ae.sort_by(|a, b| a.total_cmp(b));
    ae[ae.len() / 2]
}

fn main() -> planartrack::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let g = GeneratorConfig {
        perturbation: 16.0,
        ..GeneratorConfig::default()
    };
    let train: Vec<_> = (0..n).map(|i| generate_pair(&procedural_image(i, 240, 240), &g, i)).collect::<Result<_, _>>()?;
    let test: Vec<_> = (0..20).map(|i| generate_pair(&procedural_image(9_000 + i, 240, 240), &g, i)).collect::<Result<_, _>>()?;
    let cfg = TrackerConfig {
        head: HeadKind::Learned,
        ..TrackerConfig::default()
    };
    let tc = MotionTrainConfig {
        epochs: 4,
        batch: 4,
        adam: AdamConfig {
            lr: 3e-3,
            decay_every: 100,
            ..AdamConfig::default()
        },
        train_levels: vec![30, 60],
        ..MotionTrainConfig::default()
    };
    let (model, log) = train_motion(&train, &cfg, &tc)?;
    for e in &log {
        println!("epoch {}: L_d {:.3} L_m {:.3} L_v {:.3}", e.epoch, e.l_d, e.l_m, e.l_v);
    }
    let path = std::env::temp_dir().join("planartrack-learned.bin");
    model.save(&path)?;
    println!("weights written to {}", path.display());
    let learned = median_ae(Arc::new(TrackerModel::load(&path)?), &cfg, &test);
    let analytic = median_ae(Arc::new(TrackerModel::analytic()), &TrackerConfig::default(), &test);
    println!("median AE on {} test pairs: learned {learned:.2} px, analytic {analytic:.2} px", test.len());
    Ok(())
}
