//! Pinned synthetic experiment: synthesize, train both stages on half the
//! subjects, then compare the fused score of the trained model against the
//! same architecture at its random initialization on the held-out half.

use std::time::Instant;

use morphkit::cli::{config_split, encode_pairs, evaluate, random_init_checkpoint, stage1_config, stage2_config, RunConfig};
use morphkit::detect::{build_pairs, cosine, score_set, Phase};
use morphkit::embednet::{critic_scores, EmbeddingTriple, stage2_pair_pools, train_stage1, train_stage2, Dataset};
use morphkit::evalkit::{d_eer, det_curve};
use morphkit::imaging::synth_dataset;

fn main() -> morphkit::Result<()> {
    let mut cfg = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        cfg.set(k, v)?;
    }
    let dir = std::env::temp_dir().join(format!("morphkit-e2e-{}", cfg.seed));
    let t0 = Instant::now();
    let manifest = synth_dataset(&cfg.synth(), &dir)?;
    cfg.manifest = Some(dir.join("manifest.csv"));
    let split = config_split(&cfg, &manifest)?;
    let data = Dataset::load(&manifest, Some(&split.train), cfg.image_size)?;
    println!("synth: {:.1}s, {} training images", t0.elapsed().as_secs_f64(), data.samples.len());

    let t1 = Instant::now();
    let s1 = train_stage1(&data, &stage1_config(&cfg))?;
    println!("stage 1: {:.1}s, loss {:?}", t1.elapsed().as_secs_f64(), s1.epoch_losses);
    let t2 = Instant::now();
    let s2 = train_stage2(&data, &s1.checkpoint, &stage2_config(&cfg))?;
    println!("stage 2: {:.1}s, loss {:?}", t2.elapsed().as_secs_f64(), s2.epoch_losses);

    let (gen, cross, morph) = stage2_pair_pools(&data);
    let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let g = critic_scores(&s2.checkpoint, &data, &gen)?;
    let mut imp = cross.clone();
    imp.extend(morph);
    let i = critic_scores(&s2.checkpoint, &data, &imp)?;
    println!(
        "critic means: genuine ({:.4}, {:.4}) imposter ({:.4}, {:.4})",
        mean(&g, |p| p.0),
        mean(&g, |p| p.1),
        mean(&i, |p| p.0),
        mean(&i, |p| p.1)
    );

    for (name, ckpt) in [
        ("random init", random_init_checkpoint(&cfg, data.classes.len())?),
        ("stage 1", s1.checkpoint.clone()),
        ("stage 2", s2.checkpoint.clone()),
    ] {
        let r = evaluate(&cfg, &ckpt, &manifest)?;
        println!("{}: beta {} -> {}", name, r.beta, r.metrics.to_string().replace('\n', "  "));
        let pairs = build_pairs(&manifest.restrict(&split.test), Phase::Test)?;
        let enc = encode_pairs(&ckpt, &manifest, &pairs)?;
        let spaces: [(&str, fn(&EmbeddingTriple) -> &Vec<f64>); 3] =
            [("z_f", |t| &t.z_f), ("z_a", |t| &t.z_a), ("z_g", |t| &t.z_g)];
        for (space, pick) in spaces {
            let scores = enc
                .iter()
                .map(|p| cosine(pick(&p.trusted), pick(&p.questioned)))
                .collect::<morphkit::Result<Vec<_>>>()?;
            let set = score_set(&enc, &scores, cfg.polarity());
            println!("    {} alone: D-EER {:.4}", space, d_eer(&det_curve(&set)?));
        }
    }
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
