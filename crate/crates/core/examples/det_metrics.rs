//! DET curve, D-EER and BPCER at fixed APCER for overlapping Gaussian
//! score distributions; writes the curve as CSV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use morphkit::evalkit::{bpcer_at_apcer, d_eer, det_curve, Polarity, ScoreSet};

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = Normal::new(0.0, 1.0).expect("valid");
    let a = Normal::new(2.0, 1.0).expect("valid");
    let genuine: Vec<f64> = (0..2000).map(|_| g.sample(&mut rng)).collect();
    let attack: Vec<f64> = (0..2000).map(|_| a.sample(&mut rng)).collect();

    let curve = det_curve(&ScoreSet::new(genuine.clone(), attack.clone(), Polarity::HighIsAttack))?;
    println!("points: {}", curve.points.len());
    // two unit Gaussians two sigmas apart cross at Phi(-1) ~ 0.1587
    println!("D-EER {:.4}", d_eer(&curve));
    for target in [0.01, 0.05, 0.10] {
        println!("BPCER@APCER={:.2}: {:.4}", target, bpcer_at_apcer(&curve, target));
    }

    // the same scores negated with the opposite polarity give the same curve
    let neg = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
    let flipped = det_curve(&ScoreSet::new(neg(&genuine), neg(&attack), Polarity::LowIsAttack))?;
    println!("D-EER with flipped polarity {:.4}", d_eer(&flipped));

    let path = std::env::temp_dir().join("det.csv");
    curve.save_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
