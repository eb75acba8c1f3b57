use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use morphkit::cli::{self, RunConfig};
use morphkit::embednet::{init_model, Checkpoint};
use morphkit::features::Descriptor;
use morphkit::imaging::{FaceImage, Manifest, ManifestRow, SampleKind};

const TINY: &str = "subjects=8\ncaptures=2\nmorphs=1\nimage_size=32\nchannels=4,4\nstrides=2,2\nd_a=4\nd_g=4\nd_f=6\n\
                    critic_hidden=4\nepochs1=2\nepochs2=2\nbatch_size=4\nval_fraction=0.5\n";

fn morphkit(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_morphkit"));
    c.args(args).env_remove(cli::THREADS_ENV);
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_setup(dir: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, format!("{}{}", TINY, extra)).unwrap();
    let out = morphkit(&["synth", "--config", s(&cfg), "--out", s(&dir.join("data"))], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(&cfg, format!("{}{}manifest={}\n", TINY, extra, s(&dir.join("data/manifest.csv")))).unwrap();
    cfg
}

#[test]
fn synth_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = morphkit(
            &["synth", "--subjects", "20", "--captures", "3", "--morphs", "2", "--seed", "7", "--out", s(out)],
            &[],
        );
        assert!(o.status.success());
    }
    let m = Manifest::load(&a.join("manifest.csv")).unwrap();
    assert_eq!(m.reals().count(), 60);
    assert_eq!(m.morphs().count(), 40);
    for row in &m.rows {
        for f in [&row.path, &row.landmarks_path] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
    }
    assert_eq!(
        std::fs::read(a.join("manifest.csv")).unwrap(),
        std::fs::read(b.join("manifest.csv")).unwrap()
    );
    let o = morphkit(&["synth", "--subjects", "1", "--out", s(&dir.path().join("c"))], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("need ≥ 2 subjects"));
}

#[test]
fn train_log_eval_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path(), "epochs1=11\n");
    let s1 = dir.path().join("s1");
    let o = morphkit(&["train", "--stage", "1", "--config", s(&cfg), "--out", s(&s1)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(s1.join(cli::TRAIN_LOG)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,loss,lr");
    assert_eq!(lines.len(), 12);
    for (e, line) in lines[1..].iter().enumerate() {
        let lr: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        let want = 0.1 * 0.9f64.powi((e / 5) as i32);
        assert!((lr - want).abs() < 1e-15, "epoch {}: {} vs {}", e, lr, want);
    }
    let o = morphkit(&["train", "--stage", "2", "--config", s(&cfg), "--out", s(&dir.path().join("x"))], &[]);
    assert_eq!(o.status.code(), Some(2));

    let s2 = dir.path().join("s2");
    let ck1 = s1.join(cli::CHECKPOINT);
    let o = morphkit(&["train", "--stage", "2", "--init", s(&ck1), "--config", s(&cfg), "--out", s(&s2)], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck2 = s2.join(cli::CHECKPOINT);

    let sweep = dir.path().join("sweep");
    assert!(morphkit(&["sweep-beta", "--checkpoint", s(&ck2), "--config", s(&cfg), "--out", s(&sweep)], &[])
        .status
        .success());
    let eval = dir.path().join("eval");
    let o = morphkit(
        &["eval", "--checkpoint", s(&ck2), "--config", s(&cfg), "--out", s(&eval)],
        &[(cli::THREADS_ENV, "2")],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep_report = std::fs::read_to_string(sweep.join(cli::REPORT)).unwrap();
    let eval_report = std::fs::read_to_string(eval.join(cli::REPORT)).unwrap();
    let selected = sweep_report.lines().find_map(|l| l.strip_prefix("selected_beta: ")).unwrap();
    let used = eval_report.lines().find_map(|l| l.strip_prefix("beta: ")).unwrap();
    assert_eq!(selected, used);
    let hash = RunConfig::parse(&std::fs::read_to_string(&cfg).unwrap()).unwrap().hash();
    assert!(eval_report.contains(&format!("config_hash: {}", hash)));
    assert!(eval_report.contains("D-EER: "));
    assert!(std::fs::read_to_string(eval.join(cli::SCORES)).unwrap().starts_with("pair_index,label,score\n"));
    assert!(std::fs::read_to_string(eval.join(cli::DET)).unwrap().starts_with("threshold,apcer,bpcer\n"));

    // cross-dataset: the second manifest's subjects are all test subjects
    let other = dir.path().join("other");
    assert!(morphkit(&["synth", "--config", s(&cfg), "--seed", "99", "--out", s(&other)], &[]).status.success());
    let cross = dir.path().join("cross");
    let o = morphkit(
        &[
            "eval",
            "--checkpoint",
            s(&ck2),
            "--config",
            s(&cfg),
            "--eval-manifest",
            s(&other.join("manifest.csv")),
            "--out",
            s(&cross),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(cross.join(cli::REPORT)).unwrap().contains("dataset: train -> eval"));

    let bad = morphkit(&["eval", "--checkpoint", s(&ck2), "--config", s(&cfg)], &[(cli::THREADS_ENV, "zero")]);
    assert!(!bad.status.success());
}

#[test]
fn zero_epoch_stage1_is_the_seeded_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path(), "epochs1=0\n");
    let out = dir.path().join("s1");
    assert!(morphkit(&["train", "--stage", "1", "--config", s(&cfg), "--out", s(&out)], &[]).status.success());
    let ck = Checkpoint::load(&out.join(cli::CHECKPOINT)).unwrap();
    assert_eq!(ck.params, init_model(&ck.meta.encoder, 7).unwrap());
    assert_eq!(ck.meta.encoder.n_classes, 2);
}

#[test]
fn gradcheck_command_and_fault_injection() {
    let dir = tempfile::tempdir().unwrap();
    let o = morphkit(&["gradcheck", "--out", s(dir.path())], &[]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    let listed: Vec<&str> = text.lines().skip(1).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(listed, cli::LOSS_NAMES);
    let o = morphkit(&["gradcheck", "--inject-fault", "L2_a", "--out", s(dir.path())], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn usage_errors() {
    let o = morphkit(&["baseline", "--descriptor", "hog"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "epochs=3\n").unwrap();
    let o = morphkit(&["gradcheck", "--config", s(&cfg)], &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown config key `epochs`"));
}

#[test]
fn morph_and_triplet_commands_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_setup(dir.path(), "");
    let m = Manifest::load(&dir.path().join("data/manifest.csv")).unwrap();
    let reals: Vec<&ManifestRow> = m.reals().map(|(_, r)| r).collect();
    let out = dir.path().join("m");
    let o = morphkit(
        &["morph", "--a", &reals[0].path, "--b", &reals[2].path, "--config", s(&cfg), "--out", s(&out)],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(FaceImage::load_ppm(&out.join("morph.ppm")).is_ok());
    let t = dir.path().join("t");
    assert!(morphkit(&["triplets", "--count", "2", "--config", s(&cfg), "--out", s(&t)], &[]).status.success());
    assert!(t.join("triplet_1_x.ppm").exists());
    assert_eq!(std::fs::read_to_string(t.join("triplets.csv")).unwrap().lines().count(), 3);
}

/// Genuine pairs are identical copies; attacks pair a subject with another
/// subject's face.
fn toy_manifest(dir: &Path) -> Manifest {
    let rows_dir = tempfile::tempdir_in(dir).unwrap();
    let src = cli::cmd_synth(
        &RunConfig::parse("subjects=8\ncaptures=2\nmorphs=1\nimage_size=32\n").unwrap(),
        rows_dir.path(),
    )
    .unwrap();
    let mut rows = Vec::new();
    let firsts: Vec<&ManifestRow> = src.reals().map(|(_, r)| r).filter(|r| r.path.ends_with("_c0.ppm")).collect();
    for (i, r) in firsts.iter().enumerate() {
        for k in 0..2 {
            let path = format!("{}_{}.ppm", r.subject_id, k);
            std::fs::copy(src.resolve(&r.path), dir.join(&path)).unwrap();
            std::fs::copy(src.resolve(&r.landmarks_path), dir.join(format!("{}.txt", path))).unwrap();
            rows.push(ManifestRow {
                path: path.clone(),
                subject_id: r.subject_id.clone(),
                kind: SampleKind::Real,
                source_a: None,
                source_b: None,
                landmarks_path: format!("{}.txt", path),
            });
        }
        let other = firsts[(i + 1) % firsts.len()];
        let path = format!("{}_m.ppm", r.subject_id);
        std::fs::copy(src.resolve(&other.path), dir.join(&path)).unwrap();
        std::fs::copy(src.resolve(&other.landmarks_path), dir.join(format!("{}.txt", path))).unwrap();
        rows.push(ManifestRow {
            path: path.clone(),
            subject_id: r.subject_id.clone(),
            kind: SampleKind::Morph,
            source_a: Some(format!("{}_0.ppm", r.subject_id)),
            source_b: Some(format!("{}_0.ppm", other.subject_id)),
            landmarks_path: format!("{}.txt", path),
        });
    }
    let m = Manifest::new(dir, rows);
    m.save(&dir.join("manifest.csv")).unwrap();
    m
}

#[test]
fn baselines_separate_a_constructed_toy_set() {
    // histogram differences are small, so the kernel width is set explicitly
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path());
    let cfg = RunConfig::parse(&format!(
        "image_size=32\nval_fraction=0\nbsif_filters=4\nbsif_size=5\nbsif_patches=500\nsvm_c=1000\nsvm_gamma=100\nmanifest={}\n",
        s(&dir.path().join("manifest.csv"))
    ))
    .unwrap();
    for d in [Descriptor::Lbp, Descriptor::Bsif, Descriptor::Landmark] {
        let r = cli::run_baseline(&cfg, &m, d).unwrap();
        assert_eq!(r.metrics.d_eer, 0.0, "{}", r.text);
    }
}
