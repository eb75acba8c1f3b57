//! Trains the RBF SVM on two noisy rings and reports support vectors, the
//! KKT violation of the solution and the held-out D-EER.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morphkit::detect::{kkt_violation, svm_score, svm_solve, svm_train};
use morphkit::evalkit::{MetricSummary, Polarity, ScoreSet};

fn ring<R: Rng>(rng: &mut R, radius: f64, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            let r = radius + rng.random_range(-0.3..0.3);
            vec![r * t.cos(), r * t.sin()]
        })
        .collect()
}

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (c, gamma, tol) = (10.0, 0.5, 1e-3);
    let mut x = ring(&mut rng, 1.0, 60);
    x.extend(ring(&mut rng, 2.5, 60));
    let y: Vec<f64> = (0..120).map(|i| if i < 60 { -1.0 } else { 1.0 }).collect();

    let sol = svm_solve(&x, &y, c, gamma, tol)?;
    println!("iterations {}, objective {:.6}", sol.iterations, sol.objective);
    println!("kkt violation {:.2e}", kkt_violation(&x, &y, c, gamma, &sol));

    let model = svm_train(&x, &y, c, gamma, tol)?;
    println!("support vectors: {}", model.support.len());
    let genuine = ring(&mut rng, 1.0, 100);
    let attack = ring(&mut rng, 2.5, 100);
    let score = |v: &Vec<f64>| svm_score(&model, v);
    let set = ScoreSet::new(
        genuine.iter().map(score).collect::<morphkit::Result<_>>()?,
        attack.iter().map(score).collect::<morphkit::Result<_>>()?,
        Polarity::HighIsAttack,
    );
    print!("{}", MetricSummary::from_scores(&set)?);
    Ok(())
}
