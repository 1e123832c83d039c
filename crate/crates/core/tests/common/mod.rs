#![allow(dead_code)]

use std::path::Path;

use planartrack::config::Config;
use planartrack::imaging::save_image;
use planartrack::synthbench::{
    generate_sequence, procedural_image, write_annotations, OccluderConfig, Sequence, SequenceConfig,
};

/// A configuration small enough that the whole generate/train/track/eval
/// loop runs in seconds.
pub fn tiny_config() -> Config {
    let mut c = Config::default();
    c.dataset.pairs = 14;
    c.dataset.confidence_pairs = 6;
    c.generator.image_size = 96;
    c.generator.template_size = 48;
    c.generator.levels = vec![12, 24, 48];
    c.generator.perturbation = 6.0;
    c.generator.occluders = OccluderConfig::NONE;
    c.tracker.template_size = 48;
    c.tracker.levels = vec![12, 24, 48];
    c.tracker.reboot_ages = vec![2, 4];
    c.train.epochs = 1;
    c.train.batch = 2;
    c.train.train_levels = vec![12, 24];
    c.confidence.epochs = 20;
    c
}

pub fn small_sequence(seed: u64, frames: usize) -> Sequence {
    let cfg = SequenceConfig {
        frames,
        frame_width: 160,
        frame_height: 120,
        object_size: 60,
        max_translation: 2.0,
        ..SequenceConfig::default()
    };
    generate_sequence(&procedural_image(seed, 120, 120), &cfg, seed).unwrap()
}

/// Writes `frames/NNNNNN.png` and `annotations.txt` under `dir`.
pub fn write_sequence(dir: &Path, seq: &Sequence) {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).unwrap();
    for (i, f) in seq.frames.iter().enumerate() {
        save_image(frames.join(format!("{i:06}.png")), f).unwrap();
    }
    write_annotations(dir.join("annotations.txt"), &seq.annotation()).unwrap();
}
