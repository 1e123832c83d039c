//! Labels tracking attempts as reliable or not, trains the confidence head
//! on their cost-volume statistics and scores a held-out set.

use std::sync::Arc;

use planartrack::synthbench::{generate_pair, procedural_image, GeneratorConfig, OccluderConfig};
use planartrack::tracking::train::collect_confidence_data;
use planartrack::tracking::{
    reliability_label, roc_auc, train_confidence, ConfidenceTrainConfig, TrackerConfig, TrackerModel,
};

fn labelled(seeds: std::ops::Range<u64>) -> planartrack::Result<Vec<(Vec<f64>, f64)>> {
    let cfg = TrackerConfig::default();
    let model = Arc::new(TrackerModel::analytic());
    let mut out = Vec::new();
    for i in seeds {
        // Alternate easy pairs with large, occluded ones.
        let mut g = GeneratorConfig::default();
        if i % 2 == 0 {
            g.perturbation = 8.0;
            g.occluders = OccluderConfig::NONE;
        }
        let s = generate_pair(&procedural_image(i, 240, 240), &g, i)?;
        for (stats, l_d) in collect_confidence_data(&[s], &cfg, model.clone())? {
            out.push((stats, reliability_label(l_d)));
        }
    }
    Ok(out)
}

fn main() -> planartrack::Result<()> {
    let train = labelled(0..80)?;
    let test = labelled(500..540)?;
    let head = train_confidence(&train, &ConfidenceTrainConfig::default())?;
    let scores = test.iter().map(|(s, _)| head.score(s)).collect::<planartrack::Result<Vec<_>>>()?;
    let labels: Vec<f64> = test.iter().map(|d| d.1).collect();
    println!("{} reliable of {} training attempts", train.iter().filter(|d| d.1 == 1.0).count(), train.len());
    println!("held-out ROC-AUC {:.3}", roc_auc(&scores, &labels));
    Ok(())
}
