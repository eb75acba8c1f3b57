//! LBP histograms and BSIF codes from an ICA filter bank learned on random
//! patches of synthetic faces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morphkit::features::{bsif_code, lbp_histogram, train_filterbank};
use morphkit::imaging::{FaceImage, SubjectModel};

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let faces: Vec<FaceImage> = (0..4).map(|_| SubjectModel::sample(&mut rng, 64).render()).collect();

    let size = 7;
    let patches: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let face = &faces[rng.random_range(0..faces.len())];
            let g = face.grayscale();
            let (x0, y0) = (rng.random_range(0..64 - size), rng.random_range(0..64 - size));
            (0..size * size).map(|i| g[(y0 + i / size) * 64 + x0 + i % size]).collect()
        })
        .collect();
    let bank = train_filterbank(&patches, size, 8, 2)?;
    println!("filter bank: {} filters of {}x{}", bank.n_filters(), bank.size(), bank.size());

    for (i, face) in faces.iter().enumerate() {
        let lbp = lbp_histogram(face)?;
        let bsif = bsif_code(face, &bank)?;
        let peak = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        println!(
            "face {}: lbp dim {} peak {:.3}, bsif dim {} peak {:.3}",
            i,
            lbp.dim(),
            peak(&lbp.values),
            bsif.dim(),
            peak(&bsif.values)
        );
    }
    Ok(())
}
