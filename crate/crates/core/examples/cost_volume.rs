//! Builds the correlation volume between a template and a shifted copy,
//! decodes the displacement and prints the confidence statistics.

use planartrack::correlation::{build_cost_volume, cost_volume_statistics, soft_argmax_decode, DEFAULT_TEMPERATURE};
use planartrack::estimation::{estimate_increment_from_cost_volume, AnalyticConfig};
use planartrack::features::{extract, Extractor};
use planartrack::geometry::{normalization_homography, Homography, Quad};
use planartrack::imaging::{sample_planar_object_filtered, Mask};
use planartrack::synthbench::procedural_image;

fn main() -> planartrack::Result<()> {
    let frame = procedural_image(11, 240, 240);
    let h = normalization_homography(&Quad::axis_aligned(60.0, 60.0, 179.0, 179.0)?, 120, 120)?;
    // In the tracked template the object sits at (-2.5, 1.25) pixels from
    // its reference position.
    let moved = Homography::translation(-2.5, 1.25).compose(&h);
    let f_r = extract(&sample_planar_object_filtered(&frame, &h, 120)?, &Extractor::FilterBank)?;
    let f_t = extract(&sample_planar_object_filtered(&frame, &moved, 120)?, &Extractor::FilterBank)?;
    let cv = build_cost_volume(&f_r, &f_t, 4)?;
    let field = soft_argmax_decode(&cv, DEFAULT_TEMPERATURE);
    let mid = field.displacement[field.index(60, 60)];
    println!("{} channels, decoded displacement at centre: ({:.2}, {:.2})", cv.channels(), mid[0], mid[1]);
    let valid = Mask::filled(120, 120, true);
    let est = estimate_increment_from_cost_volume(&cv, DEFAULT_TEMPERATURE, &valid, &AnalyticConfig::default())?;
    println!("robust fit, top-left corner: {:.2?}", est.disp.d[0]);
    println!("statistics: {:?}", cost_volume_statistics(&[cv], DEFAULT_TEMPERATURE));
    Ok(())
}
