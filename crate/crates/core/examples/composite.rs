//! Pastes a checkerboard onto a tracked plane, respecting visibility, and
//! writes the composited frames.
//!
//! `cargo run --example composite [OUT_DIR]`

use std::sync::Arc;

use planartrack::geometry::normalization_homography;
use planartrack::imaging::{composite, save_image, ImageBuffer};
use planartrack::synthbench::{generate_sequence, procedural_image, SequenceConfig};
use planartrack::tracking::{init_track, track_frame, TrackerConfig, TrackerModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: std::path::PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("composite"));
    std::fs::create_dir_all(&out)?;
    let mut checker = Vec::with_capacity(64 * 64 * 3);
    for y in 0..64 {
        for x in 0..64 {
            let on = (x / 8 + y / 8) % 2 == 0;
            checker.extend(if on { [1.0, 0.2, 0.1] } else { [0.1, 0.2, 0.9] });
        }
    }
    let overlay = ImageBuffer::new(64, 64, 3, checker)?;
    let seq = generate_sequence(&procedural_image(4, 240, 240), &SequenceConfig { frames: 10, ..SequenceConfig::default() }, 4)?;
    let cfg = TrackerConfig::default();
    let h_in = normalization_homography(&seq.quads[0], cfg.template_size, cfg.template_size)?;
    let mut state = init_track(&seq.frames[0], &seq.quads[0], &cfg, Arc::new(TrackerModel::analytic()))?;
    for (t, frame) in seq.frames.iter().enumerate().skip(1) {
        let r = track_frame(&mut state, frame)?;
        let img = composite(frame, &overlay, &h_in, &r.h_ij, &r.vis)?;
        save_image(out.join(format!("{t:06}.png")), &img)?;
    }
    println!("wrote {} frames to {}", seq.frames.len() - 1, out.display());
    Ok(())
}
