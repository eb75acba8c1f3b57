//! Renders a small synthetic dataset with morphs and prints its manifest
//! summary. Pass an output directory as the first argument.

use morphkit::imaging::{synth_dataset, SynthConfig};

fn main() -> morphkit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("morphkit-synth"));
    let cfg = SynthConfig {
        subjects: 6,
        captures: 2,
        morphs: 1,
        ..SynthConfig::default()
    };
    let m = synth_dataset(&cfg, &out)?;
    println!("{} reals, {} morphs in {}", m.reals().count(), m.morphs().count(), out.display());
    for (_, r) in m.morphs() {
        println!(
            "{} targets {} (sources {} + {})",
            r.path,
            r.subject_id,
            r.source_a.as_deref().unwrap_or("?"),
            r.source_b.as_deref().unwrap_or("?")
        );
    }
    Ok(())
}
