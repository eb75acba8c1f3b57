//! Fits a thin-plate spline between two landmark sets, checks that it
//! interpolates them, and warps a synthetic face onto the new geometry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use morphkit::geometry::{canonical_template, max_residual, sample_perturbation, tps_fit, warp_image, LandmarkSet};
use morphkit::imaging::SubjectModel;

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let source = canonical_template(112);
    let delta = sample_perturbation(&mut rng, 4.0, source.len());
    let target = source.offset_by(&delta)?;

    let t = tps_fit(&source, &target, 0.0)?;
    println!("max residual at the control points: {:.2e}", max_residual(&t, &source, &target));
    let centre = source.centroid();
    let moved = t.apply(centre);
    println!("landmark centroid moves by ({:.3}, {:.3})", moved.x - centre.x, moved.y - centre.y);
    println!("identity fit, affine part: {:?}", tps_fit(&source, &source, 0.0)?.affine());

    let face = SubjectModel::sample(&mut rng, 112);
    let (warped, _) = warp_image(&face.render(), &face.landmarks, &target, &LandmarkSet::zeros(target.len()), 0.0)?;
    let dir = std::env::temp_dir();
    face.render().save_ppm(&dir.join("tps_source.ppm"))?;
    warped.save_ppm(&dir.join("tps_warped.ppm"))?;
    println!("wrote {}", dir.join("tps_warped.ppm").display());
    Ok(())
}
