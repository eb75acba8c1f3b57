//! Morphs two synthetic subjects at a few warp/blend factors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use morphkit::imaging::{generate_morph, MorphOptions, SubjectModel, WarpMode};

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = SubjectModel::sample(&mut rng, 112);
    let b = SubjectModel::sample(&mut rng, 112);
    let (ia, ib) = (a.render(), b.render());
    let dir = std::env::temp_dir().join("morphkit-morphs");
    std::fs::create_dir_all(&dir)?;

    for (alpha, mode) in [(0.3, WarpMode::Both), (0.5, WarpMode::Both), (0.5, WarpMode::FirstOnly)] {
        let opts = MorphOptions {
            alpha_warp: alpha,
            alpha_blend: alpha,
            warp_mode: mode,
            ..MorphOptions::default()
        };
        let (img, lms) = generate_morph(&ia, &a.landmarks, &ib, &b.landmarks, &opts)?;
        let path = dir.join(format!("morph_{}_{:?}.ppm", alpha, mode));
        img.save_ppm(&path)?;
        println!(
            "alpha {} {:?}: landmark distance to a {:.2}, to b {:.2} -> {}",
            alpha,
            mode,
            lms.l2_distance(&a.landmarks)?,
            lms.l2_distance(&b.landmarks)?,
            path.display()
        );
    }
    Ok(())
}
