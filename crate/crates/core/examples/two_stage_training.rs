//! Synthesizes a small dataset, runs both training stages and prints the
//! per-epoch losses.

use std::collections::BTreeSet;
use std::time::Instant;

use morphkit::embednet::{train_stage1, train_stage2, Dataset, Stage1Config, Stage2Config};
use morphkit::imaging::{synth_dataset, SynthConfig};

fn main() -> morphkit::Result<()> {
    let dir = std::env::temp_dir().join("morphkit-two-stage");
    let manifest = synth_dataset(&SynthConfig::default(), &dir)?;
    let subjects: BTreeSet<String> = manifest.subjects().into_iter().take(10).collect();
    let data = Dataset::load(&manifest, Some(&subjects), 112)?;

    let t = Instant::now();
    let s1 = train_stage1(
        &data,
        &Stage1Config {
            epochs: 6,
            batch_size: 8,
            seed: 1,
            ..Stage1Config::default()
        },
    )?;
    println!("stage 1 losses {:?} ({:.1?})", s1.epoch_losses, t.elapsed());

    let t = Instant::now();
    let s2 = train_stage2(
        &data,
        &s1.checkpoint,
        &Stage2Config {
            epochs: 3,
            batch_size: 8,
            seed: 1,
            ..Stage2Config::default()
        },
    )?;
    println!("stage 2 losses {:?} ({:.1?})", s2.epoch_losses, t.elapsed());
    Ok(())
}
