//! Compares the fixed filter bank with a (randomly initialised) learned
//! feature network on the same template.

use planartrack::features::{extract, ConvNetWeights, Extractor, Topology};
use planartrack::geometry::{normalization_homography, Quad};
use planartrack::imaging::sample_planar_object_filtered;
use planartrack::synthbench::procedural_image;

fn main() -> planartrack::Result<()> {
    let frame = procedural_image(3, 240, 240);
    let quad = Quad::axis_aligned(60.0, 60.0, 179.0, 179.0)?;
    let template = sample_planar_object_filtered(&frame, &normalization_homography(&quad, 120, 120)?, 120)?;
    let net = ConvNetWeights::random(Topology::default(), 1);
    for (name, ex) in [
        ("intensity", Extractor::Intensity),
        ("filter bank", Extractor::FilterBank),
        ("conv net", Extractor::ConvNet(Box::new(net))),
    ] {
        let f = extract(&template, &ex)?;
        let norm = f.pixel(60, 60).iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{name:12} {} channels, normalized {}, |f(60,60)| = {norm:.3}", f.channels, f.normalized);
    }
    Ok(())
}
