//! Fused cosine scoring of embedding pairs and the β grid sweep. The
//! synthetic embeddings put the attack signal mostly in the landmark space.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use morphkit::detect::{beta_sweep, default_beta_grid, EncodedPair, PairLabel};
use morphkit::embednet::EmbeddingTriple;
use morphkit::evalkit::Polarity;

fn main() -> morphkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 1.0).expect("valid");
    let mut vec = |n: usize| -> Vec<f64> { (0..n).map(|_| noise.sample(&mut rng)).collect() };

    let mut pairs = Vec::new();
    for i in 0..200 {
        let attack = i % 2 == 1;
        let base = EmbeddingTriple {
            z_a: vec(8),
            z_g: vec(8),
            z_f: vec(16),
        };
        let (da, dg, df) = if attack { (0.6, 1.5, 0.7) } else { (0.5, 0.4, 0.5) };
        let jitter = |v: &[f64], s: f64, r: Vec<f64>| v.iter().zip(r).map(|(x, e)| x + s * e).collect();
        let q = EmbeddingTriple {
            z_a: jitter(&base.z_a, da, vec(8)),
            z_g: jitter(&base.z_g, dg, vec(8)),
            z_f: jitter(&base.z_f, df, vec(16)),
        };
        pairs.push(EncodedPair {
            trusted: base,
            questioned: q,
            label: if attack { PairLabel::Attack } else { PairLabel::Genuine },
        });
    }

    let (best, all) = beta_sweep(&pairs, &default_beta_grid(), Polarity::LowIsAttack)?;
    for (b, d) in all {
        println!("beta {}: D-EER {:.4}", b, d);
    }
    println!("selected {}", best);
    Ok(())
}
