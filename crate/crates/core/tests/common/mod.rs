#![allow(dead_code)]

use morphkit::detect::kernel_matrix;
use morphkit::evalkit::{OperatingPoint, Polarity, ScoreSet};

/// Minimizes `0.5 aᵀQa − Σa` over `0 ≤ a ≤ c, yᵀa = 0` by accelerated
/// projected gradient. Returns the objective value.
pub fn dual_objective_pg(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, iters: usize) -> f64 {
    let n = x.len();
    let k = kernel_matrix(x, gamma);
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    // spectral bound: Gershgorin
    let l = (0..n).map(|i| (0..n).map(|j| q(i, j).abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / l;
    let objective = |a: &[f64]| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += 0.5 * a[i] * a[j] * q(i, j);
            }
        }
        s - a.iter().sum::<f64>()
    };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q(i, j) * z[j]).sum::<f64>() - 1.0).collect();
        let v: Vec<f64> = (0..n).map(|i| z[i] - step * grad[i]).collect();
        let next = project(&v, y, c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - a[i])).collect();
        a = next;
        t = t_next;
    }
    objective(&a)
}

/// Euclidean projection onto the box intersected with `yᵀa = 0`, by bisection
/// on the multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lambda * yi).clamp(0.0, c)).collect() };
    let balance = |a: &[f64]| a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Operating point recounted from scratch at threshold `t`.
pub fn brute_point(s: &ScoreSet, t: f64) -> OperatingPoint {
    let attack = |v: f64| match s.polarity {
        Polarity::HighIsAttack => v > t,
        Polarity::LowIsAttack => v < t,
    };
    OperatingPoint {
        threshold: t,
        apcer: s.attack.iter().filter(|&&v| !attack(v)).count() as f64 / s.attack.len() as f64,
        bpcer: s.genuine.iter().filter(|&&v| attack(v)).count() as f64 / s.genuine.len() as f64,
    }
}

/// Every distinct score plus the two infinite sentinels, ordered from the
/// threshold flagging everything as attack to the one flagging nothing.
pub fn brute_curve(s: &ScoreSet) -> Vec<OperatingPoint> {
    let mut ts: Vec<f64> = s.genuine.iter().chain(&s.attack).copied().collect();
    ts.push(f64::INFINITY);
    ts.push(f64::NEG_INFINITY);
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if s.polarity == Polarity::LowIsAttack {
        ts.reverse();
    }
    ts.into_iter().map(|t| brute_point(s, t)).collect()
}

/// Crossing of the polyline through `pts` with the diagonal apcer = bpcer.
pub fn brute_eer(pts: &[OperatingPoint]) -> f64 {
    if let Some(p) = pts.iter().find(|p| p.apcer == p.bpcer) {
        return p.apcer;
    }
    for w in pts.windows(2) {
        let (a0, b0, a1, b1) = (w[0].apcer, w[0].bpcer, w[1].apcer, w[1].bpcer);
        if (a0 < b0) && (a1 > b1) {
            // solve a0 + u (a1 - a0) = b0 + u (b1 - b0)
            let u = (b0 - a0) / ((a1 - a0) - (b1 - b0));
            return a0 + u * (a1 - a0);
        }
    }
    0.5
}

/// Smallest BPCER over all thresholds with APCER ≤ target.
pub fn brute_bpcer_at(s: &ScoreSet, target: f64) -> f64 {
    brute_curve(s)
        .iter()
        .filter(|p| p.apcer <= target)
        .map(|p| p.bpcer)
        .fold(1.0, f64::min)
}
