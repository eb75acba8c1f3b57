use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use crate::detect::{
    baseline_pair_feature, beta_sweep, build_pairs, save_pairs, score_pairs, score_set, scores_to_csv, svm_score,
    train_baseline, BetaConfig, EncodedPair, PairLabel, PairRecord, Phase, SvmParams,
};
use crate::embednet::{
    encode_batch, init_model, train_stage1, train_stage2, Checkpoint, CheckpointMeta, Dataset, Stage1Config,
    Stage2Config, TrainReport, ENCODER,
};
use crate::error::{Error, Result};
use crate::evalkit::{det_curve, MetricSummary, Polarity};
use crate::features::{
    bsif_code, landmark_displacement_feature, lbp_histogram, train_filterbank, Descriptor, FeatureVector, FilterBank,
};
use crate::geometry::{canonical_template, phi_g, AlignAnchors, LandmarkSet, Similarity};
use crate::imaging::{build_triplet, generate_morph, synth_dataset, Manifest, PoolEntry};

pub const REPORT: &str = "report.txt";
pub const SCORES: &str = "scores.csv";
pub const DET: &str = "det.csv";
pub const CHECKPOINT: &str = "checkpoint.mkpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PAIRS: &str = "pairs.csv";

/// Disjoint subject sets. `val` is carved out of the training share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl Split {
    /// Training plus validation subjects.
    pub fn train_all(&self) -> BTreeSet<String> {
        self.train.union(&self.val).cloned().collect()
    }
}

pub fn split_subjects(subjects: &[String], train_fraction: f64, val_fraction: f64, seed: u64) -> Result<Split> {
    let n = subjects.len();
    if n < 2 {
        return Err(Error::invalid("a split needs at least 2 subjects"));
    }
    let mut order: Vec<String> = subjects.to_vec();
    order.sort();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let n_val = if val_fraction > 0.0 {
        ((n_train as f64 * val_fraction).ceil() as usize).min(n_train - 1)
    } else {
        0
    };
    Ok(Split {
        val: order[..n_val].iter().cloned().collect(),
        train: order[n_val..n_train].iter().cloned().collect(),
        test: order[n_train..].iter().cloned().collect(),
    })
}

fn require_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("`manifest` is not set".into()))?;
    Manifest::load(path)
}

pub fn config_split(cfg: &RunConfig, manifest: &Manifest) -> Result<Split> {
    split_subjects(&manifest.subjects(), cfg.train_fraction, cfg.val_fraction, cfg.seed)
}

fn header(cfg: &RunConfig, command: &str) -> String {
    format!("command: {}\nconfig_hash: {}\nseed: {}\n", command, cfg.hash(), cfg.seed)
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    synth_dataset(&cfg.synth(), out)
}

/// Morph of two manifest images, written as `morph.ppm` and `morph.txt`.
pub fn cmd_morph(cfg: &RunConfig, a: &str, b: &str, out: &Path) -> Result<PathBuf> {
    let manifest = require_manifest(cfg)?;
    let row = |p: &str| {
        manifest
            .row_by_path(p)
            .ok_or_else(|| Error::invalid(format!("`{}` is not in the manifest", p)))
    };
    let (ra, rb) = (row(a)?, row(b)?);
    let (img_a, img_b) = (manifest.load_image(ra)?, manifest.load_image(rb)?);
    let (lm_a, lm_b) = (manifest.load_landmarks(ra, None)?, manifest.load_landmarks(rb, None)?);
    let (img, lms) = generate_morph(&img_a, &lm_a, &img_b, &lm_b, &cfg.morph_options())?;
    ensure_dir(out)?;
    let path = out.join("morph.ppm");
    img.save_ppm(&path)?;
    lms.save(&out.join("morph.txt"))?;
    fs::write(
        out.join(REPORT),
        format!("{}source_a: {}\nsource_b: {}\n", header(cfg, "morph"), a, b),
    )?;
    Ok(path)
}

/// Writes `count` training triplets of the manifest's real images as
/// `triplet_{i}_{a,l,x}.ppm` plus `triplets.csv`.
pub fn cmd_triplets(cfg: &RunConfig, count: usize, out: &Path) -> Result<usize> {
    let manifest = require_manifest(cfg)?;
    let data = Dataset::load(&manifest, None, cfg.image_size)?;
    let reals = data.reals();
    if reals.is_empty() {
        return Err(Error::invalid("manifest has no real images"));
    }
    let pool: Vec<PoolEntry> = reals
        .iter()
        .map(|&i| PoolEntry {
            image: &data.samples[i].image,
            landmarks: &data.samples[i].landmarks,
            class: data.samples[i].class,
        })
        .collect();
    ensure_dir(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("index,appearance_path,landmark_class,phi_g\n");
    for i in 0..count {
        let k = rng.random_range(0..pool.len());
        let e = pool[k];
        let t = build_triplet(e.image, e.landmarks, e.class, &pool, &mut rng, &cfg.triplet())?;
        t.appearance.save_ppm(&out.join(format!("triplet_{}_a.ppm", i)))?;
        t.landmark_image.save_ppm(&out.join(format!("triplet_{}_l.ppm", i)))?;
        t.intermediate.save_ppm(&out.join(format!("triplet_{}_x.ppm", i)))?;
        let phi = phi_g(&t.appearance_landmarks, &t.landmark_landmarks)?;
        let _ = writeln!(
            csv,
            "{},{},{},{:?}",
            i,
            data.samples[reals[k]].path,
            data.classes[t.landmark_class],
            phi
        );
    }
    fs::write(out.join("triplets.csv"), csv)?;
    Ok(count)
}

pub fn stage1_config(cfg: &RunConfig) -> Stage1Config {
    Stage1Config {
        encoder: cfg.encoder(),
        margin: cfg.margin(),
        weights: cfg.weights(),
        schedule: cfg.schedule(1),
        epochs: cfg.epochs1,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        triplet: cfg.triplet(),
    }
}

pub fn stage2_config(cfg: &RunConfig) -> Stage2Config {
    Stage2Config {
        weights: cfg.weights(),
        margin: cfg.margin(),
        schedule: cfg.schedule(2),
        epochs: cfg.epochs2,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        dual_encoder: cfg.dual_encoder,
        update: cfg.update(),
    }
}

/// Training data of a run: the training subjects, without validation.
pub fn training_data(cfg: &RunConfig, manifest: &Manifest) -> Result<Dataset> {
    let split = config_split(cfg, manifest)?;
    Dataset::load(manifest, Some(&split.train), cfg.image_size)
}

/// Trains one stage and writes `checkpoint.mkpt`, `train_log.csv` and
/// `report.txt` under `out`.
pub fn cmd_train(cfg: &RunConfig, stage: u8, init: Option<&Path>, out: &Path) -> Result<TrainReport> {
    let manifest = require_manifest(cfg)?;
    let data = training_data(cfg, &manifest)?;
    let report = match stage {
        1 => train_stage1(&data, &stage1_config(cfg))?,
        2 => {
            let init = init.ok_or_else(|| Error::Config("stage 2 requires --init <stage-1 checkpoint>".into()))?;
            let stage1 = Checkpoint::load(init)?;
            train_stage2(&data, &stage1, &stage2_config(cfg))?
        }
        s => return Err(Error::Config(format!("unknown stage {}", s))),
    };
    ensure_dir(out)?;
    report.checkpoint.save(&out.join(CHECKPOINT))?;
    let schedule = cfg.schedule(stage);
    let mut log = String::from("epoch,loss,lr\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(log, "{},{:?},{:?}", e, l, schedule.at_epoch(e));
    }
    fs::write(out.join(TRAIN_LOG), log)?;
    let mut text = header(cfg, &format!("train --stage {}", stage));
    let _ = writeln!(text, "dataset: {}", cfg.dataset_id);
    let _ = writeln!(text, "training_subjects: {}", data.classes.len());
    let _ = writeln!(text, "epochs: {}", report.epoch_losses.len());
    if let Some(l) = report.epoch_losses.last() {
        let _ = writeln!(text, "final_loss: {:.6}", l);
    }
    fs::write(out.join(REPORT), text)?;
    Ok(report)
}

/// Checkpoint with the seeded initial weights of the configured encoder.
pub fn random_init_checkpoint(cfg: &RunConfig, n_classes: usize) -> Result<Checkpoint> {
    let encoder = crate::embednet::EncoderConfig {
        n_classes,
        ..cfg.encoder()
    };
    Ok(Checkpoint {
        params: init_model(&encoder, cfg.seed)?,
        meta: CheckpointMeta {
            stage: 0,
            seed: cfg.seed,
            encoder,
            margin: cfg.margin(),
            weights: cfg.weights(),
            dual_encoder: false,
        },
    })
}

/// Embeddings for every pair. Trusted images go through the checkpoint's
/// trusted encoder, questioned ones through the main encoder.
pub fn encode_pairs(ckpt: &Checkpoint, manifest: &Manifest, pairs: &[PairRecord]) -> Result<Vec<EncodedPair>> {
    let subjects: BTreeSet<String> = pairs
        .iter()
        .flat_map(|p| [&p.trusted_path, &p.questioned_path])
        .filter_map(|path| manifest.row_by_path(path).map(|r| r.subject_id.clone()))
        .collect();
    let data = Dataset::load(manifest, Some(&subjects), ckpt.meta.encoder.input_size)?;
    let index: BTreeMap<&str, usize> = data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.path.as_str(), i))
        .collect();
    let lookup = |p: &str| {
        index
            .get(p)
            .copied()
            .ok_or_else(|| Error::invalid(format!("pair image `{}` is not in the manifest", p)))
    };
    let encode_side = |paths: Vec<&str>, prefix: &str| -> Result<BTreeMap<String, crate::embednet::EmbeddingTriple>> {
        let uniq: Vec<&str> = paths.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let imgs = uniq
            .iter()
            .map(|p| lookup(p).map(|i| &data.samples[i].image))
            .collect::<Result<Vec<_>>>()?;
        let emb = encode_batch(&ckpt.params, &ckpt.meta.encoder, prefix, &imgs)?;
        Ok(uniq.into_iter().map(String::from).zip(emb).collect())
    };
    let trusted = encode_side(pairs.iter().map(|p| p.trusted_path.as_str()).collect(), ckpt.trusted_prefix())?;
    let questioned = encode_side(pairs.iter().map(|p| p.questioned_path.as_str()).collect(), ENCODER)?;
    Ok(pairs
        .iter()
        .map(|p| EncodedPair {
            trusted: trusted[&p.trusted_path].clone(),
            questioned: questioned[&p.questioned_path].clone(),
            label: p.label,
        })
        .collect())
}

fn pairs_for(manifest: &Manifest, subjects: &BTreeSet<String>) -> Result<Vec<PairRecord>> {
    build_pairs(&manifest.restrict(subjects), Phase::Test)
}

/// β grid sweep on the validation subjects.
pub fn sweep_validation(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    manifest: &Manifest,
) -> Result<(BetaConfig, Vec<(BetaConfig, f64)>)> {
    let split = config_split(cfg, manifest)?;
    if split.val.is_empty() {
        return Err(Error::Config("β sweep needs val_fraction > 0".into()));
    }
    let encoded = encode_pairs(ckpt, manifest, &pairs_for(manifest, &split.val)?)?;
    beta_sweep(&encoded, &cfg.beta_grid, cfg.polarity())
}

pub fn cmd_sweep(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(BetaConfig, Vec<(BetaConfig, f64)>)> {
    let manifest = require_manifest(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let (best, all) = sweep_validation(cfg, &ckpt, &manifest)?;
    ensure_dir(out)?;
    let mut text = header(cfg, "sweep-beta");
    for (b, d) in &all {
        let _ = writeln!(text, "beta {}: D-EER {:.6}", b, d);
    }
    let _ = writeln!(text, "selected_beta: {}", best);
    fs::write(out.join(REPORT), text)?;
    Ok((best, all))
}

/// Metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub beta: BetaConfig,
    pub sweep: Vec<(BetaConfig, f64)>,
    pub metrics: MetricSummary,
    pub labels: Vec<PairLabel>,
    pub scores: Vec<f64>,
    pub text: String,
}

/// Fused scores of the test pairs and their metrics; no files written.
pub fn evaluate(cfg: &RunConfig, ckpt: &Checkpoint, manifest: &Manifest) -> Result<EvalReport> {
    let (beta, sweep) = match cfg.beta {
        Some(b) => (b, Vec::new()),
        None => sweep_validation(cfg, ckpt, manifest)?,
    };
    let (test_manifest, test_subjects, label) = match &cfg.eval_manifest {
        Some(p) => {
            let m = Manifest::load(p)?;
            let s = m.subjects().into_iter().collect();
            (m, s, format!("{} -> {}", cfg.dataset_id, cfg.eval_dataset_id))
        }
        None => (manifest.clone(), config_split(cfg, manifest)?.test, cfg.dataset_id.clone()),
    };
    let pairs = pairs_for(&test_manifest, &test_subjects)?;
    let encoded = encode_pairs(ckpt, &test_manifest, &pairs)?;
    let mut scores = score_pairs(&encoded, beta)?;
    if !cfg.trusted_known && ckpt.meta.dual_encoder {
        // order unknown: average both assignments of the two encoders
        let swapped: Vec<PairRecord> = pairs
            .iter()
            .map(|p| PairRecord {
                trusted_path: p.questioned_path.clone(),
                questioned_path: p.trusted_path.clone(),
                ..p.clone()
            })
            .collect();
        let other = score_pairs(&encode_pairs(ckpt, &test_manifest, &swapped)?, beta)?;
        for (s, o) in scores.iter_mut().zip(other) {
            *s = 0.5 * (*s + o);
        }
    }
    let set = score_set(&encoded, &scores, cfg.polarity());
    let metrics = MetricSummary::from_curve(&det_curve(&set)?);
    let mut text = header(cfg, "eval");
    let _ = writeln!(text, "dataset: {}", label);
    let _ = writeln!(text, "checkpoint_stage: {}", ckpt.meta.stage);
    let _ = writeln!(text, "dual_encoder: {}", ckpt.meta.dual_encoder);
    for (b, d) in &sweep {
        let _ = writeln!(text, "validation beta {}: D-EER {:.6}", b, d);
    }
    let _ = writeln!(text, "beta: {}", beta);
    let _ = writeln!(text, "pairs: {} genuine, {} attack", set.genuine.len(), set.attack.len());
    text.push_str(&metrics.to_string());
    Ok(EvalReport {
        beta,
        sweep,
        metrics,
        labels: pairs.iter().map(|p| p.label).collect(),
        scores,
        text,
    })
}

fn write_scored(out: &Path, text: &str, labels: &[PairLabel], scores: &[f64], polarity: Polarity) -> Result<()> {
    ensure_dir(out)?;
    fs::write(out.join(REPORT), text)?;
    fs::write(out.join(SCORES), scores_to_csv(labels, scores)?)?;
    let labelled: Vec<(f64, bool)> = scores.iter().zip(labels).map(|(&s, l)| (s, l.is_attack())).collect();
    det_curve(&crate::evalkit::ScoreSet::from_labelled(&labelled, polarity))?.save_csv(&out.join(DET))?;
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    let manifest = require_manifest(cfg)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let report = evaluate(cfg, &ckpt, &manifest)?;
    write_scored(out, &report.text, &report.labels, &report.scores, cfg.polarity())?;
    Ok(report)
}

/// Landmarks moved onto the canonical template by the eye/mouth similarity.
pub fn align_to_template(l: &LandmarkSet, template: &LandmarkSet) -> Result<LandmarkSet> {
    let anchors = AlignAnchors::default();
    let sim = Similarity::estimate(&anchors.anchors(l)?, &anchors.anchors(template)?)?;
    Ok(l.map(|p| sim.apply(p)))
}

fn bsif_bank(cfg: &RunConfig, data: &Dataset) -> Result<FilterBank> {
    let reals = data.reals();
    let (s, size) = (data.samples[reals[0]].image.width(), cfg.bsif_size);
    if s < size {
        return Err(Error::invalid("images are smaller than the BSIF filter"));
    }
    let grays: Vec<Vec<f64>> = reals.iter().map(|&i| data.samples[i].image.grayscale()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let patches = (0..cfg.bsif_patches)
        .map(|_| {
            let g = &grays[rng.random_range(0..grays.len())];
            let (x0, y0) = (rng.random_range(0..=s - size), rng.random_range(0..=s - size));
            (0..size * size)
                .map(|k| g[(y0 + k / size) * s + x0 + k % size])
                .collect()
        })
        .collect::<Vec<Vec<f64>>>();
    train_filterbank(&patches, size, cfg.bsif_filters, cfg.seed)
}

/// Pair features of a descriptor over `pairs`, with per-image features
/// computed once.
fn pair_features(
    descriptor: Descriptor,
    data: &Dataset,
    pairs: &[PairRecord],
    bank: Option<&FilterBank>,
    trusted_known: bool,
) -> Result<Vec<FeatureVector>> {
    let index: BTreeMap<&str, usize> = data
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.path.as_str(), i))
        .collect();
    let lookup = |p: &str| {
        index
            .get(p)
            .copied()
            .ok_or_else(|| Error::invalid(format!("pair image `{}` is not loaded", p)))
    };
    if descriptor == Descriptor::Landmark {
        let template = canonical_template(data.samples[0].image.width());
        let aligned = data
            .samples
            .iter()
            .map(|s| align_to_template(&s.landmarks, &template))
            .collect::<Result<Vec<_>>>()?;
        return pairs
            .iter()
            .map(|p| landmark_displacement_feature(&aligned[lookup(&p.trusted_path)?], &aligned[lookup(&p.questioned_path)?]))
            .collect();
    }
    let per_image = crate::features::extract_all(&data.samples, |s| match descriptor {
        Descriptor::Lbp => lbp_histogram(&s.image),
        _ => bsif_code(&s.image, bank.expect("BSIF bank trained")),
    })?;
    pairs
        .iter()
        .map(|p| {
            baseline_pair_feature(
                &per_image[lookup(&p.trusted_path)?],
                &per_image[lookup(&p.questioned_path)?],
                trusted_known,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineReport {
    pub descriptor: Descriptor,
    pub metrics: MetricSummary,
    pub labels: Vec<PairLabel>,
    pub scores: Vec<f64>,
    pub text: String,
}

/// Texture or landmark features with an RBF SVM: trained on pairs of the
/// training subjects, scored on the test subjects.
pub fn run_baseline(cfg: &RunConfig, manifest: &Manifest, descriptor: Descriptor) -> Result<BaselineReport> {
    let split = config_split(cfg, manifest)?;
    let train_subjects = split.train_all();
    let train = Dataset::load(manifest, Some(&train_subjects), cfg.image_size)?;
    let test = Dataset::load(manifest, Some(&split.test), cfg.image_size)?;
    let bank = match descriptor {
        Descriptor::Bsif => Some(bsif_bank(cfg, &train)?),
        _ => None,
    };
    let train_pairs = pairs_for(manifest, &train_subjects)?;
    let test_pairs = pairs_for(manifest, &split.test)?;
    let train_labels: Vec<PairLabel> = train_pairs.iter().map(|p| p.label).collect();
    if !train_labels.iter().any(|l| l.is_attack()) || train_labels.iter().all(|l| l.is_attack()) {
        return Err(Error::Degenerate("baseline training pairs have a single label".into()));
    }
    let x_train = pair_features(descriptor, &train, &train_pairs, bank.as_ref(), cfg.trusted_known)?;
    let params = SvmParams {
        c: cfg.svm_c,
        gamma: (cfg.svm_gamma > 0.0).then_some(cfg.svm_gamma),
        ..SvmParams::default()
    };
    let model = train_baseline(&x_train, &train_labels, params)?;
    let x_test = pair_features(descriptor, &test, &test_pairs, bank.as_ref(), cfg.trusted_known)?;
    let scores = x_test
        .iter()
        .map(|f| svm_score(&model, &f.values))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<PairLabel> = test_pairs.iter().map(|p| p.label).collect();
    let labelled: Vec<(f64, bool)> = scores.iter().zip(&labels).map(|(&s, l)| (s, l.is_attack())).collect();
    let set = crate::evalkit::ScoreSet::from_labelled(&labelled, Polarity::HighIsAttack);
    let metrics = MetricSummary::from_curve(&det_curve(&set)?);
    let mut text = header(cfg, "baseline");
    let _ = writeln!(text, "dataset: {}", cfg.dataset_id);
    let _ = writeln!(text, "descriptor: {}", descriptor);
    let _ = writeln!(text, "trusted_known: {}", cfg.trusted_known);
    let _ = writeln!(text, "support_vectors: {}", model.support.len());
    let _ = writeln!(text, "pairs: {} genuine, {} attack", set.genuine.len(), set.attack.len());
    text.push_str(&metrics.to_string());
    Ok(BaselineReport {
        descriptor,
        metrics,
        labels,
        scores,
        text,
    })
}

pub fn cmd_baseline(cfg: &RunConfig, descriptor: Descriptor, out: &Path) -> Result<BaselineReport> {
    let manifest = require_manifest(cfg)?;
    let report = run_baseline(cfg, &manifest, descriptor)?;
    write_scored(out, &report.text, &report.labels, &report.scores, Polarity::HighIsAttack)?;
    Ok(report)
}

/// Writes the test-split pair list of the configured manifest.
pub fn write_test_pairs(cfg: &RunConfig, out: &Path) -> Result<Vec<PairRecord>> {
    let manifest = require_manifest(cfg)?;
    let split = config_split(cfg, &manifest)?;
    let pairs = pairs_for(&manifest, &split.test)?;
    ensure_dir(out)?;
    save_pairs(&pairs, &out.join(PAIRS))?;
    Ok(pairs)
}
