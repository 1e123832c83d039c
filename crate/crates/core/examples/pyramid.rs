//! Samples a planar object into a template pyramid and writes the levels
//! as PNG files.
//!
//! `cargo run --example pyramid [OUT_DIR]`

use planartrack::geometry::{normalization_homography, Quad};
use planartrack::imaging::{build_template_pyramid, save_image};
use planartrack::synthbench::procedural_image;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: std::path::PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("pyramid"));
    std::fs::create_dir_all(&out)?;
    let frame = procedural_image(7, 320, 240);
    let quad = Quad::new([[90.0, 50.0], [230.0, 70.0], [220.0, 200.0], [80.0, 180.0]])?;
    let h_in = normalization_homography(&quad, 120, 120)?;
    let pyramid = build_template_pyramid(&frame, &h_in, &[30, 60, 120], 120)?;
    save_image(out.join("frame.png"), &frame)?;
    for t in &pyramid.levels {
        let path = out.join(format!("level_{}.png", t.size()));
        save_image(&path, &t.image)?;
        println!("{} ({} of {} pixels valid)", path.display(), t.valid.count(), t.size() * t.size());
    }
    Ok(())
}
