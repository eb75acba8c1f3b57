//! Command implementations behind the `morphkit` binary, usable as a
//! library so every command can be driven from tests.

mod commands;
mod config;
mod gradcheck;

pub use commands::{
    align_to_template, cmd_baseline, cmd_eval, cmd_morph, cmd_sweep, cmd_synth, cmd_train, cmd_triplets,
    config_split, encode_pairs, evaluate, random_init_checkpoint, run_baseline, split_subjects, stage1_config,
    stage2_config, sweep_validation, training_data, write_test_pairs, BaselineReport, EvalReport, Split, CHECKPOINT,
    DET, PAIRS, REPORT, SCORES, TRAIN_LOG,
};
pub use config::RunConfig;
pub use gradcheck::{
    gradcheck, gradcheck_encoder, gradcheck_seeds, gradcheck_with, GradcheckReport, GRADCHECK_TOLERANCE, LOSS_NAMES,
};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "MORPHKIT_THREADS";

/// Sizes the global rayon pool from `MORPHKIT_THREADS` when set.
pub fn init_threads() -> crate::Result<Option<usize>> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| crate::Error::Config(format!("{} must be a positive integer, got `{}`", THREADS_ENV, v)))?;
    // a pool built earlier in the process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}
