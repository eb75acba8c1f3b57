//! Builds appearance / landmark / intermediate triplets from a pool of
//! synthetic subjects.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use morphkit::geometry::phi_g;
use morphkit::imaging::{build_triplet, FaceImage, PoolEntry, SubjectModel, TripletOptions};

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let models: Vec<SubjectModel> = (0..6).map(|_| SubjectModel::sample(&mut rng, 112)).collect();
    let images: Vec<FaceImage> = models.iter().map(SubjectModel::render).collect();
    let pool: Vec<PoolEntry> = models
        .iter()
        .zip(&images)
        .enumerate()
        .map(|(class, (m, image))| PoolEntry {
            image,
            landmarks: &m.landmarks,
            class,
        })
        .collect();

    let dir = std::env::temp_dir().join("morphkit-triplets");
    std::fs::create_dir_all(&dir)?;
    let opts = TripletOptions::default();
    for (i, e) in pool.iter().enumerate() {
        let t = build_triplet(e.image, e.landmarks, e.class, &pool, &mut rng, &opts)?;
        println!(
            "subject {}: partner class {}, phi_g {:.4}",
            i,
            t.landmark_class,
            phi_g(e.landmarks, &t.intermediate_landmarks)?
        );
        t.intermediate.save_ppm(&dir.join(format!("intermediate_{}.ppm", i)))?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}
