use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use morphkit::cli::{self, RunConfig};
use morphkit::features::Descriptor;

#[derive(Parser)]
#[command(name = "morphkit", version, about = "Differential face-morph detection toolkit")]
struct Args {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the config manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with morphs.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        captures: Option<usize>,
        #[arg(long)]
        morphs: Option<usize>,
    },
    /// Morph two manifest images.
    Morph {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Write training triplets of the manifest's real images.
    Triplets {
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Train stage 1 or stage 2 (from a stage-1 checkpoint).
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long, required_if_eq("stage", "2"))]
        init: Option<PathBuf>,
    },
    /// Score the test pairs with the fused embedding similarity.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Second manifest for cross-dataset evaluation.
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
    },
    /// Sweep the β grid on the validation subjects.
    SweepBeta {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Texture or landmark features with an RBF SVM.
    Baseline {
        #[arg(long)]
        descriptor: Descriptor,
    },
    /// Finite-difference check of every loss graph.
    Gradcheck {
        /// Corrupt the analytic gradient of one loss (test hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Write the test-split pair list.
    Pairs,
}

fn load_config(args: &Args) -> morphkit::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::parse(&fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = &args.manifest {
        cfg.manifest = Some(m.clone());
    }
    Ok(cfg)
}

fn run(args: Args) -> morphkit::Result<bool> {
    cli::init_threads()?;
    let mut cfg = load_config(&args)?;
    let out: &Path = &args.out;
    match args.command {
        Command::Synth {
            subjects,
            captures,
            morphs,
        } => {
            cfg.subjects = subjects.unwrap_or(cfg.subjects);
            cfg.captures = captures.unwrap_or(cfg.captures);
            cfg.morphs = morphs.unwrap_or(cfg.morphs);
            let m = cli::cmd_synth(&cfg, out)?;
            println!("{} rows written to {}", m.rows.len(), out.join("manifest.csv").display());
        }
        Command::Morph { a, b } => {
            let p = cli::cmd_morph(&cfg, &a, &b, out)?;
            println!("{}", p.display());
        }
        Command::Triplets { count } => {
            cli::cmd_triplets(&cfg, count, out)?;
            println!("{} triplets written to {}", count, out.display());
        }
        Command::Train { stage, init } => {
            let r = cli::cmd_train(&cfg, stage, init.as_deref(), out)?;
            let schedule = cfg.schedule(stage);
            for (e, l) in r.epoch_losses.iter().enumerate() {
                println!("epoch {:>3}  loss {:.6}  lr {:e}", e, l, schedule.at_epoch(e));
            }
            println!("{}", out.join(cli::CHECKPOINT).display());
        }
        Command::Eval {
            checkpoint,
            eval_manifest,
        } => {
            if eval_manifest.is_some() {
                cfg.eval_manifest = eval_manifest;
            }
            print!("{}", cli::cmd_eval(&cfg, &checkpoint, out)?.text);
        }
        Command::SweepBeta { checkpoint } => {
            let (best, all) = cli::cmd_sweep(&cfg, &checkpoint, out)?;
            for (b, d) in all {
                println!("beta {}: D-EER {:.6}", b, d);
            }
            println!("selected {}", best);
        }
        Command::Baseline { descriptor } => {
            print!("{}", cli::cmd_baseline(&cfg, descriptor, out)?.text);
        }
        Command::Gradcheck { inject_fault } => {
            let seeds = cli::gradcheck_seeds(cfg.seed);
            let report = cli::gradcheck_with(&seeds, |loss, _, g| {
                if inject_fault.as_deref() == Some(loss) {
                    g.data_mut()[0] += 1.0;
                }
            })?;
            let text = report.to_text();
            print!("{}", text);
            fs::create_dir_all(out)?;
            fs::write(out.join(cli::REPORT), format!("config_hash: {}\n{}", cfg.hash(), text))?;
            return Ok(report.passed());
        }
        Command::Pairs => {
            let p = cli::write_test_pairs(&cfg, out)?;
            println!("{} pairs written to {}", p.len(), out.join(cli::PAIRS).display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}
