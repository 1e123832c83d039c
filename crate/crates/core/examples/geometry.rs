//! Homography basics: four-point parameterisation, normalization of a quad
//! onto the template, and the surrogate update between templates.

use planartrack::geometry::{
    four_point_to_homography, homography_to_four_point, normalization_homography, recover_full_homography,
    solve_homography, surrogate_update, FourPointDisplacement, Quad,
};

fn main() -> planartrack::Result<()> {
    let d = FourPointDisplacement::from_array([3.0, -2.0, 1.5, 0.5, -1.0, 2.0, 0.0, -4.0]);
    let h = four_point_to_homography(&d, 120, 120)?;
    let back = homography_to_four_point(&h, 120, 120)?;
    println!("4-point -> H -> 4-point: {:?}", back.to_array());

    let reference = Quad::axis_aligned(100.0, 60.0, 219.0, 179.0)?;
    let current = Quad::new([[108.0, 64.0], [226.0, 70.0], [221.0, 186.0], [103.0, 181.0]])?;
    let h_in = normalization_homography(&reference, 120, 120)?;
    let h_jn = normalization_homography(&current, 120, 120)?;

    // The increment between templates, applied to the reference
    // normalization, lands on the current one.
    let h_s = h_jn.compose(&h_in.invert()?);
    let updated = surrogate_update(&h_in, &h_s);
    let h_ij = recover_full_homography(&h_in, &updated)?;
    let direct = solve_homography(&current.corners, &reference.corners)?;
    println!("recovered h_ij:\n{h_ij}");
    println!("corner error vs direct solve: {:.2e}", h_ij.max_point_distance(&direct, &current.corners));
    Ok(())
}
