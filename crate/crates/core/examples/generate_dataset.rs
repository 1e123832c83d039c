//! Writes a small synthetic pair archive, reads it back and prints the
//! provenance of each sample.
//!
//! `cargo run --example generate_dataset [OUT_DIR]`

use planartrack::synthbench::{
    generate_pair, load_dataset, procedural_image, save_dataset, GeneratorConfig, Split,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: std::path::PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("pairs"));
    let g = GeneratorConfig::default();
    let samples = (0..7u64)
        .map(|i| Ok((Split::of_index(i as usize), generate_pair(&procedural_image(i, 240, 240), &g, i)?)))
        .collect::<planartrack::Result<Vec<_>>>()?;
    save_dataset(&out, &samples)?;
    for (rec, s) in load_dataset(&out)? {
        println!(
            "{:?} seed {} occluders {} visible {:.2}",
            rec.split,
            s.provenance.seed,
            s.provenance.occluders.len(),
            s.gt_vis.last().map_or(0.0, |v| v.visible_fraction())
        );
    }
    println!("archive in {}", out.display());
    Ok(())
}
