//! Biometric error metrics for morph-attack detection: APCER, BPCER, the DET
//! curve, D-EER and BPCER at fixed APCER.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Which side of the threshold is called an attack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Polarity {
    /// Attack iff `score > threshold`.
    #[default]
    HighIsAttack,
    /// Attack iff `score < threshold`.
    LowIsAttack,
}

impl Polarity {
    pub fn flipped(self) -> Polarity {
        match self {
            Polarity::HighIsAttack => Polarity::LowIsAttack,
            Polarity::LowIsAttack => Polarity::HighIsAttack,
        }
    }

    pub fn is_attack(self, score: f64, threshold: f64) -> bool {
        match self {
            Polarity::HighIsAttack => score > threshold,
            Polarity::LowIsAttack => score < threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    /// Bona fide scores.
    pub genuine: Vec<f64>,
    pub attack: Vec<f64>,
    pub polarity: Polarity,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, attack: Vec<f64>, polarity: Polarity) -> Self {
        ScoreSet {
            genuine,
            attack,
            polarity,
        }
    }

    /// Splits labelled scores; `true` marks an attack.
    pub fn from_labelled(scores: &[(f64, bool)], polarity: Polarity) -> Self {
        let (a, g): (Vec<&(f64, bool)>, Vec<&(f64, bool)>) = scores.iter().partition(|(_, is_attack)| *is_attack);
        ScoreSet::new(
            g.into_iter().map(|p| p.0).collect(),
            a.into_iter().map(|p| p.0).collect(),
            polarity,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

/// Operating points ordered from "everything is an attack" (APCER 0,
/// BPCER 1) to "everything is bona fide" (APCER 1, BPCER 0).
#[derive(Clone, Debug, PartialEq)]
pub struct DetCurve {
    pub points: Vec<OperatingPoint>,
    pub polarity: Polarity,
}

/// Operating points at every distinct score plus the two infinite sentinels.
pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve> {
    if scores.genuine.is_empty() || scores.attack.is_empty() {
        return Err(Error::invalid("both bona fide and attack scores are required"));
    }
    if scores.genuine.iter().chain(&scores.attack).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("detection score"));
    }
    // orient so that "attack" always means a large oriented score
    let sign = match scores.polarity {
        Polarity::HighIsAttack => 1.0,
        Polarity::LowIsAttack => -1.0,
    };
    let orient = |v: &[f64]| {
        let mut o: Vec<f64> = v.iter().map(|s| sign * s).collect();
        o.sort_by(f64::total_cmp);
        o
    };
    let (g, a) = (orient(&scores.genuine), orient(&scores.attack));
    let mut thresholds: Vec<f64> = g.iter().chain(&a).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let (ng, na) = (g.len() as f64, a.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    for t in std::iter::once(f64::NEG_INFINITY)
        .chain(thresholds)
        .chain(std::iter::once(f64::INFINITY))
    {
        let missed = a.partition_point(|&s| s <= t) as f64;
        let rejected = g.len() as f64 - g.partition_point(|&s| s <= t) as f64;
        points.push(OperatingPoint {
            threshold: sign * t,
            apcer: missed / na,
            bpcer: rejected / ng,
        });
    }
    Ok(DetCurve {
        points,
        polarity: scores.polarity,
    })
}

/// Rate at which APCER equals BPCER, linearly interpolated between the
/// bracketing operating points.
pub fn d_eer(curve: &DetCurve) -> f64 {
    let p = &curve.points;
    if let Some(q) = p.iter().find(|q| q.apcer == q.bpcer) {
        return q.apcer;
    }
    for w in p.windows(2) {
        let (d0, d1) = (w[0].apcer - w[0].bpcer, w[1].apcer - w[1].bpcer);
        if d0 < 0.0 && d1 > 0.0 {
            let u = -d0 / (d1 - d0);
            return w[0].apcer + u * (w[1].apcer - w[0].apcer);
        }
    }
    // unreachable for curves built by det_curve, whose ends are (0, 1) and (1, 0)
    0.5
}

/// Smallest BPCER over operating points with APCER ≤ `target`.
pub fn bpcer_at_apcer(curve: &DetCurve, target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|q| q.apcer <= target)
        .map(|q| q.bpcer)
        .fold(1.0, f64::min)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSummary {
    pub d_eer: f64,
    pub bpcer_at_5: f64,
    pub bpcer_at_10: f64,
}

impl MetricSummary {
    pub fn from_curve(curve: &DetCurve) -> Self {
        MetricSummary {
            d_eer: d_eer(curve),
            bpcer_at_5: bpcer_at_apcer(curve, 0.05),
            bpcer_at_10: bpcer_at_apcer(curve, 0.10),
        }
    }

    pub fn from_scores(scores: &ScoreSet) -> Result<Self> {
        Ok(MetricSummary::from_curve(&det_curve(scores)?))
    }
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "D-EER: {:.6}", self.d_eer)?;
        writeln!(f, "BPCER@5: {:.6}", self.bpcer_at_5)?;
        writeln!(f, "BPCER@10: {:.6}", self.bpcer_at_10)
    }
}

impl DetCurve {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["threshold", "apcer", "bpcer"])?;
        for p in &self.points {
            w.write_record([
                format!("{:?}", p.threshold),
                format!("{:?}", p.apcer),
                format!("{:?}", p.bpcer),
            ])?;
        }
        w.into_inner()
            .map_err(|e| Error::Format(format!("csv flush: {}", e)))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}
