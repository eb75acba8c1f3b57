//! Trusted/questioned pair construction, the fused similarity score, β
//! sweeps and SVM baselines.

mod svm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::embednet::EmbeddingTriple;
use crate::error::{Error, Result};
use crate::evalkit::{d_eer, det_curve, Polarity, ScoreSet};
use crate::features::FeatureVector;
use crate::imaging::Manifest;

pub use svm::{kernel_matrix, kkt_violation, rbf, svm_score, svm_solve, svm_train, SvmModel, SvmSolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairLabel {
    Genuine,
    Attack,
}

impl PairLabel {
    pub fn is_attack(self) -> bool {
        self == PairLabel::Attack
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Attack => "attack",
        })
    }
}

impl FromStr for PairLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "genuine" => Ok(PairLabel::Genuine),
            "attack" => Ok(PairLabel::Attack),
            other => Err(Error::Format(format!("unknown pair label `{}`", other))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Genuine: two reals of one subject; everything else is an imposter.
    Train,
    /// Genuine: two reals of one subject; attack: a real and a morph
    /// targeting that subject.
    Test,
}

/// A trusted/questioned image pair; paths index the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub trusted_path: String,
    pub questioned_path: String,
    pub subject_id: String,
    pub label: PairLabel,
    pub trusted_known: bool,
}

pub const PAIR_HEADER: [&str; 4] = ["trusted_path", "questioned_path", "subject_id", "label"];

pub fn build_pairs(manifest: &Manifest, phase: Phase) -> Result<Vec<PairRecord>> {
    let rows = &manifest.rows;
    let mut out = Vec::new();
    for i in 0..rows.len() {
        if !rows[i].is_real() && phase == Phase::Test {
            continue;
        }
        for j in 0..rows.len() {
            let (a, b) = (&rows[i], &rows[j]);
            let record = |label| PairRecord {
                trusted_path: a.path.clone(),
                questioned_path: b.path.clone(),
                subject_id: a.subject_id.clone(),
                label,
                trusted_known: true,
            };
            match phase {
                Phase::Test => {
                    if b.is_real() && j > i && a.subject_id == b.subject_id {
                        out.push(record(PairLabel::Genuine));
                    } else if !b.is_real() && a.subject_id == b.subject_id {
                        out.push(record(PairLabel::Attack));
                    }
                }
                Phase::Train => {
                    // unordered pairs; a real trusted side when there is one
                    let keep = if a.is_real() == b.is_real() { j > i } else { a.is_real() };
                    if !keep {
                        continue;
                    }
                    let genuine = a.is_real() && b.is_real() && a.subject_id == b.subject_id;
                    out.push(record(if genuine { PairLabel::Genuine } else { PairLabel::Attack }));
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid("manifest yields no eligible pairs"));
    }
    Ok(out)
}

pub fn save_pairs(pairs: &[PairRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PAIR_HEADER)?;
    for p in pairs {
        w.write_record([
            p.trusted_path.as_str(),
            p.questioned_path.as_str(),
            p.subject_id.as_str(),
            &p.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != PAIR_HEADER {
        return Err(Error::Format(format!("pair list header must be `{}`", PAIR_HEADER.join(","))));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(PairRecord {
                trusted_path: rec[0].to_string(),
                questioned_path: rec[1].to_string(),
                subject_id: rec[2].to_string(),
                label: rec[3].parse()?,
                trusted_known: true,
            })
        })
        .collect()
}

/// `pair_index,label,score`
pub fn scores_to_csv(labels: &[PairLabel], scores: &[f64]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["pair_index", "label", "score"])?;
    for (i, (l, s)) in labels.iter().zip(scores).enumerate() {
        w.write_record([i.to_string(), l.to_string(), format!("{:?}", s)])?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv flush: {}", e)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaConfig {
    pub beta_a: f64,
    pub beta_g: f64,
}

impl BetaConfig {
    pub fn new(beta_a: f64, beta_g: f64) -> Result<Self> {
        if !(beta_a.is_finite() && beta_g.is_finite() && beta_a >= 0.0 && beta_g >= 0.0) {
            return Err(Error::invalid("β values must be finite and ≥ 0"));
        }
        Ok(BetaConfig { beta_a, beta_g })
    }
}

impl fmt::Display for BetaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.beta_a, self.beta_g)
    }
}

pub fn default_beta_grid() -> Vec<BetaConfig> {
    [(4.0, 1.0), (3.0, 1.0), (2.0, 2.0), (1.0, 3.0), (1.0, 4.0)]
        .iter()
        .map(|&(a, g)| BetaConfig { beta_a: a, beta_g: g })
        .collect()
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine", format!("{} vs {}", u.len(), v.len())));
    }
    let (nu, nv) = (
        u.iter().map(|x| x * x).sum::<f64>().sqrt(),
        v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    );
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Degenerate("zero-norm embedding".into()));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv))
}

/// `Φ(z_f, z_f') + β_a Φ(z_a, z_a') + β_g Φ(z_g, z_g')`: a similarity, low
/// values suggest an attack.
pub fn pair_score(trusted: &EmbeddingTriple, questioned: &EmbeddingTriple, beta: BetaConfig) -> Result<f64> {
    Ok(cosine(&trusted.z_f, &questioned.z_f)?
        + beta.beta_a * cosine(&trusted.z_a, &questioned.z_a)?
        + beta.beta_g * cosine(&trusted.z_g, &questioned.z_g)?)
}

/// Embeddings and label of one evaluated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub trusted: EmbeddingTriple,
    pub questioned: EmbeddingTriple,
    pub label: PairLabel,
}

pub fn score_pairs(pairs: &[EncodedPair], beta: BetaConfig) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| pair_score(&p.trusted, &p.questioned, beta))
        .collect()
}

pub fn score_set(pairs: &[EncodedPair], scores: &[f64], polarity: Polarity) -> ScoreSet {
    let labelled: Vec<(f64, bool)> = pairs
        .iter()
        .zip(scores)
        .map(|(p, &s)| (s, p.label.is_attack()))
        .collect();
    ScoreSet::from_labelled(&labelled, polarity)
}

/// D-EER of every grid point; returns the first minimizer.
pub fn beta_sweep(
    pairs: &[EncodedPair],
    grid: &[BetaConfig],
    polarity: Polarity,
) -> Result<(BetaConfig, Vec<(BetaConfig, f64)>)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty β grid"));
    }
    let mut results = Vec::with_capacity(grid.len());
    for &beta in grid {
        let scores = score_pairs(pairs, beta)?;
        let set = score_set(pairs, &scores, polarity);
        if set.genuine.is_empty() || set.attack.is_empty() {
            return Err(Error::Degenerate("validation pairs lack one label".into()));
        }
        results.push((beta, d_eer(&det_curve(&set)?)));
    }
    let best = results
        .iter()
        .fold(results[0], |best, &r| if r.1 < best.1 { r } else { best });
    Ok((best.0, results))
}

/// `f(q) − f(t)` when the trusted image is known, `|f(t) − f(q)|` otherwise.
pub fn baseline_pair_feature(
    trusted: &FeatureVector,
    questioned: &FeatureVector,
    trusted_known: bool,
) -> Result<FeatureVector> {
    if trusted.descriptor != questioned.descriptor {
        return Err(Error::invalid("pair features use different descriptors"));
    }
    if trusted.dim() != questioned.dim() {
        return Err(Error::shape(
            "baseline_pair_feature",
            format!("{} vs {}", trusted.dim(), questioned.dim()),
        ));
    }
    let values = trusted
        .values
        .iter()
        .zip(&questioned.values)
        .map(|(t, q)| if trusted_known { q - t } else { (t - q).abs() })
        .collect();
    Ok(FeatureVector::new(trusted.descriptor, values))
}

/// SVM settings for a baseline; `gamma = None` means `1 / dim`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: Option<f64>,
    pub tol: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 10.0,
            gamma: None,
            tol: 1e-3,
        }
    }
}

/// Trains an SVM with attacks as `+1`, so higher scores mean attack.
pub fn train_baseline(features: &[FeatureVector], labels: &[PairLabel], params: SvmParams) -> Result<SvmModel> {
    let dim = features
        .first()
        .ok_or_else(|| Error::invalid("no training features"))?
        .dim();
    let x: Vec<Vec<f64>> = features.iter().map(|f| f.values.clone()).collect();
    let y: Vec<f64> = labels.iter().map(|l| if l.is_attack() { 1.0 } else { -1.0 }).collect();
    let gamma = params.gamma.unwrap_or(1.0 / dim.max(1) as f64);
    svm_train(&x, &y, params.c, gamma, params.tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Descriptor;
    use crate::imaging::{ManifestRow, SampleKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(path: &str, subject: &str, real: bool) -> ManifestRow {
        ManifestRow {
            path: path.into(),
            subject_id: subject.into(),
            kind: if real { SampleKind::Real } else { SampleKind::Morph },
            source_a: (!real).then(|| "a".into()),
            source_b: (!real).then(|| "b".into()),
            landmarks_path: format!("{}.txt", path),
        }
    }

    #[test]
    fn single_subject_test_pairs() {
        let m = Manifest::new(".", vec![row("r0", "s0", true), row("r1", "s0", true), row("m0", "s0", false)]);
        let p = build_pairs(&m, Phase::Test).unwrap();
        assert_eq!(p.iter().filter(|r| r.label == PairLabel::Genuine).count(), 1);
        assert_eq!(p.iter().filter(|r| r.label == PairLabel::Attack).count(), 2);
        assert!(p.iter().all(|r| r.trusted_path.starts_with('r')));
    }

    #[test]
    fn train_pairs_include_cross_subject_imposters() {
        let m = Manifest::new(".", vec![row("r0", "s0", true), row("r1", "s1", true)]);
        let p = build_pairs(&m, Phase::Train).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].label, PairLabel::Attack);
        let only_one = Manifest::new(".", vec![row("r0", "s0", true)]);
        assert!(build_pairs(&only_one, Phase::Test).is_err());
    }

    fn random_manifest(seed: u64) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..rng.random_range(2..14))
            .map(|i| row(&format!("p{}", i), &format!("s{}", rng.random_range(0..3)), rng.random_bool(0.7)))
            .collect();
        Manifest::new(".", rows)
    }

    #[test]
    fn pair_counts_match_enumeration() {
        for seed in 0..50 {
            let m = random_manifest(seed);
            let rows = &m.rows;
            let (mut tg, mut ta, mut rg, mut ri) = (0, 0, 0, 0);
            for i in 0..rows.len() {
                for j in i + 1..rows.len() {
                    let (a, b) = (&rows[i], &rows[j]);
                    let same = a.subject_id == b.subject_id;
                    if a.is_real() && b.is_real() && same {
                        tg += 1;
                        rg += 1;
                    } else {
                        ri += 1;
                        if same && a.is_real() != b.is_real() {
                            ta += 1;
                        }
                    }
                }
            }
            let count = |p: &[PairRecord], l| p.iter().filter(|r| r.label == l).count();
            if let Ok(p) = build_pairs(&m, Phase::Test) {
                assert_eq!((count(&p, PairLabel::Genuine), count(&p, PairLabel::Attack)), (tg, ta));
            } else {
                assert_eq!(tg + ta, 0);
            }
            if let Ok(p) = build_pairs(&m, Phase::Train) {
                assert_eq!((count(&p, PairLabel::Genuine), count(&p, PairLabel::Attack)), (rg, ri));
            }
        }
    }

    #[test]
    fn pair_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(".", vec![row("r0", "s0", true), row("r1", "s0", true), row("m0", "s0", false)]);
        let p = build_pairs(&m, Phase::Test).unwrap();
        let path = dir.path().join("pairs.csv");
        save_pairs(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("trusted_path,questioned_path,subject_id,label\nr0,r1,s0,genuine\n"));
        assert_eq!(load_pairs(&path).unwrap(), p);
        let csv = String::from_utf8(scores_to_csv(&[PairLabel::Attack], &[0.5]).unwrap()).unwrap();
        assert_eq!(csv, "pair_index,label,score\n0,attack,0.5\n");
    }

    fn triple(a: Vec<f64>, g: Vec<f64>, f: Vec<f64>) -> EmbeddingTriple {
        EmbeddingTriple { z_a: a, z_g: g, z_f: f }
    }

    #[test]
    fn pair_score_cases() {
        let t = triple(vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 1.0, 2.0]);
        let one = BetaConfig::new(1.0, 1.0).unwrap();
        assert!((pair_score(&t, &t, one).unwrap() - 3.0).abs() < 1e-12);
        let o = triple(vec![-2.0, 1.0], vec![1.0, 0.5], vec![1.0, -3.0, 0.0]);
        assert!(pair_score(&t, &o, one).unwrap().abs() < 1e-12);
        // Φ-values (0.5, 0.4, 0.3) for (f, a, g)
        let unit = |c: f64| vec![c, (1.0 - c * c).sqrt()];
        let q = triple(unit(0.4), unit(0.3), unit(0.5));
        let e = triple(vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]);
        let v = pair_score(&e, &q, BetaConfig::new(2.0, 2.0).unwrap()).unwrap();
        assert!((v - 1.9).abs() < 1e-12);
        let z = triple(vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]);
        assert!(pair_score(&e, &z, one).is_err());
    }

    fn random_triple(rng: &mut ChaCha8Rng) -> EmbeddingTriple {
        let mut v = |n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        triple(v(3), v(4), v(5))
    }

    proptest! {
        #[test]
        fn pair_score_symmetric_and_scale_free(seed in 0u64..10_000, k in 0.01f64..100.0, ba in 0.0f64..5.0, bg in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t, q) = (random_triple(&mut rng), random_triple(&mut rng));
            let beta = BetaConfig::new(ba, bg).unwrap();
            let s = pair_score(&t, &q, beta).unwrap();
            prop_assert!((s - pair_score(&q, &t, beta).unwrap()).abs() < 1e-12);
            let scaled = triple(t.z_a.iter().map(|v| v * k).collect(), t.z_g.clone(), t.z_f.iter().map(|v| v * k).collect());
            prop_assert!((s - pair_score(&scaled, &q, beta).unwrap()).abs() <= 1e-9);
        }
    }

    #[test]
    fn sweep_picks_the_separating_config() {
        // a-cosines separate only when weighted against g-cosines as in (2, 2)
        let mk = |fa: f64, fg: f64, label| {
            let unit = |c: f64| vec![c, (1.0 - c * c).sqrt()];
            EncodedPair {
                trusted: triple(vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]),
                questioned: triple(unit(fa), unit(fg), unit(0.0)),
                label,
            }
        };
        let pairs = vec![
            mk(0.9, 0.1, PairLabel::Genuine),  // (4,1): 3.7  (2,2): 2.0  (1,4): 1.3
            mk(0.1, 0.9, PairLabel::Genuine),  // (4,1): 1.3  (2,2): 2.0  (1,4): 3.7
            mk(0.45, 0.45, PairLabel::Attack), // (4,1): 2.25 (2,2): 1.8  (1,4): 2.25
        ];
        let (best, all) = beta_sweep(&pairs, &default_beta_grid(), Polarity::LowIsAttack).unwrap();
        assert_eq!(best, BetaConfig::new(2.0, 2.0).unwrap());
        for (b, d) in &all {
            let scores = score_pairs(&pairs, *b).unwrap();
            let again = d_eer(&det_curve(&score_set(&pairs, &scores, Polarity::LowIsAttack)).unwrap());
            assert_eq!(*d, again);
        }
        assert_eq!(all.iter().filter(|(_, d)| *d == 0.0).count(), 1);
        let (only, _) = beta_sweep(&pairs, &default_beta_grid()[..1], Polarity::LowIsAttack).unwrap();
        assert_eq!(only, default_beta_grid()[0]);
    }

    #[test]
    fn baseline_feature_modes() {
        let a = FeatureVector::new(Descriptor::Lbp, vec![0.2, 0.5, 0.3]);
        let b = FeatureVector::new(Descriptor::Lbp, vec![0.4, 0.1, 0.5]);
        for known in [true, false] {
            assert!(baseline_pair_feature(&a, &a, known).unwrap().values.iter().all(|&v| v == 0.0));
        }
        assert_eq!(
            baseline_pair_feature(&a, &b, false).unwrap(),
            baseline_pair_feature(&b, &a, false).unwrap()
        );
        let ab = baseline_pair_feature(&a, &b, true).unwrap();
        let ba = baseline_pair_feature(&b, &a, true).unwrap();
        assert!(ab.values.iter().zip(&ba.values).all(|(x, y)| *x == -*y));
        let c = FeatureVector::new(Descriptor::Lbp, vec![0.1]);
        assert!(baseline_pair_feature(&a, &c, true).is_err());
    }
}
