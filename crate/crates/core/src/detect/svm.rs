//! Soft-margin RBF support vector machine trained by sequential minimal
//! optimization with second-order working-set selection.

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
const MAX_ITERS_PER_POINT: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    pub support: Vec<Vec<f64>>,
    /// `alpha_i * y_i` of each support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
    pub c: f64,
}

/// Dual solution over all training points.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// `0.5 αᵀQα − Σα`
    pub objective: f64,
    pub iterations: usize,
}

pub fn rbf(u: &[f64], v: &[f64], gamma: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

fn check_inputs(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> Result<usize> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::invalid("features and labels must be nonempty and equally long"));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::invalid("SVM training needs both labels"));
    }
    if !(c > 0.0 && gamma > 0.0) {
        return Err(Error::invalid("C and gamma must be positive"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("feature dimensions differ"));
    }
    Ok(d)
}

pub fn kernel_matrix(x: &[Vec<f64>], gamma: f64) -> Vec<f64> {
    let n = x.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(&x[i], &x[j], gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Solves the dual until the maximal KKT violation `m(α) − M(α)` drops
/// below `tol`.
pub fn svm_solve(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, tol: f64) -> Result<SvmSolution> {
    check_inputs(x, y, c, gamma)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    let n = x.len();
    let k = kernel_matrix(x, gamma);
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let max_iters = MAX_ITERS_PER_POINT * n.max(10);
    let mut iterations = 0;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[i * n + i] + k[t * n + t] - 2.0 * k[i * n + t];
                if a <= 0.0 {
                    a = TAU;
                }
                if -b * b / a < best {
                    best = -b * b / a;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        if iterations >= max_iters {
            return Err(Error::Degenerate("SMO did not converge".into()));
        }
        iterations += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        let mut a = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
        if a <= 0.0 {
            a = TAU;
        }
        let b = -y[i] * grad[i] + y[j] * grad[j];
        // move along y_i Δα_i = −y_j Δα_j within the box
        let mut ni = ai + y[i] * b / a;
        let sum = y[i] * ai + y[j] * aj;
        ni = ni.clamp(0.0, c);
        let mut nj = y[j] * (sum - y[i] * ni);
        if nj < 0.0 || nj > c {
            nj = nj.clamp(0.0, c);
            ni = y[i] * (sum - y[j] * nj);
        }
        alpha[i] = ni;
        alpha[j] = nj;
        let (di, dj) = (ni - ai, nj - aj);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let v = -y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            sum += v;
            count += 1;
        } else if up(alpha[t], y[t]) {
            lb = lb.max(v);
        } else {
            ub = ub.min(v);
        }
    }
    let bias = if count > 0 {
        sum / count as f64
    } else if lb.is_finite() && ub.is_finite() {
        (lb + ub) / 2.0
    } else if lb.is_finite() {
        lb
    } else {
        ub
    };
    let objective = 0.5 * (0..n).map(|t| alpha[t] * (grad[t] - 1.0)).sum::<f64>();
    Ok(SvmSolution {
        alpha,
        bias,
        objective,
        iterations,
    })
}

/// Trains on `x` with labels ±1.
pub fn svm_train(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, tol: f64) -> Result<SvmModel> {
    let sol = svm_solve(x, y, c, gamma, tol)?;
    let (mut support, mut coef) = (Vec::new(), Vec::new());
    for (t, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support.push(x[t].clone());
            coef.push(a * y[t]);
        }
    }
    Ok(SvmModel {
        support,
        coef,
        bias: sol.bias,
        gamma,
        c,
    })
}

/// Signed margin `Σ α_i y_i k(x_i, x) + b`.
pub fn svm_score(model: &SvmModel, x: &[f64]) -> Result<f64> {
    if let Some(s) = model.support.first() {
        if s.len() != x.len() {
            return Err(Error::shape(
                "svm_score",
                format!("model dimension {}, input {}", s.len(), x.len()),
            ));
        }
    }
    Ok(model
        .support
        .iter()
        .zip(&model.coef)
        .map(|(s, a)| a * rbf(s, x, model.gamma))
        .sum::<f64>()
        + model.bias)
}

/// Largest KKT violation of a dual solution, measured on the margins
/// `y_i f(x_i)`: bound-0 points need ≥ 1, free points = 1, bound-C points ≤ 1.
pub fn kkt_violation(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64, sol: &SvmSolution) -> f64 {
    let n = x.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n)
            .filter(|&j| sol.alpha[j] > 0.0)
            .map(|j| sol.alpha[j] * y[j] * rbf(&x[j], &x[i], gamma))
            .sum::<f64>()
            + sol.bias;
        let m = y[i] * f;
        let a = sol.alpha[i];
        let v = if a <= 0.0 {
            (1.0 - m).max(0.0)
        } else if a >= c {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
        if a < 0.0 || a > c {
            worst = f64::INFINITY;
        }
    }
    let balance: f64 = sol.alpha.iter().zip(y).map(|(a, yi)| a * yi).sum();
    worst.max(if balance.abs() > 1e-6 { balance.abs() } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_points_large_c() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let y = vec![1.0, -1.0];
        let sol = svm_solve(&x, &y, 1e6, 0.5, 1e-9).unwrap();
        assert!(sol.alpha.iter().all(|&a| a > 0.0));
        let m = svm_train(&x, &y, 1e6, 0.5, 1e-9).unwrap();
        assert_eq!(m.support.len(), 2);
        // equidistant point sits on the boundary
        assert!(svm_score(&m, &[0.5, 0.5]).unwrap().abs() < 1e-9);
        assert!((svm_score(&m, &x[0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn separable_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let (cx, label) = if i % 2 == 0 { (-2.0, 1.0) } else { (2.0, -1.0) };
            x.push(vec![cx + rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)]);
            y.push(label);
        }
        let m = svm_train(&x, &y, 10.0, 0.5, 1e-3).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!(svm_score(&m, xi).unwrap() * yi > 0.0);
        }
        // far away the kernel vanishes and only the bias remains
        assert!((svm_score(&m, &[1e3, 1e3]).unwrap() - m.bias).abs() < 1e-12);
        assert!(svm_score(&m, &[1.0]).is_err());
    }

    #[test]
    fn errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(svm_train(&x, &[1.0, 1.0], 1.0, 1.0, 1e-3).is_err());
        assert!(svm_train(&x, &[1.0, -1.0], 0.0, 1.0, 1e-3).is_err());
        assert!(svm_train(&x, &[1.0, 0.5], 1.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn free_vectors_sit_on_the_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = x.iter().map(|p| if p[0] * p[1] > 0.0 { 1.0 } else { -1.0 }).collect();
        let (c, gamma) = (5.0, 2.0);
        let sol = svm_solve(&x, &y, c, gamma, 1e-4).unwrap();
        let m = svm_train(&x, &y, c, gamma, 1e-4).unwrap();
        for (t, &a) in sol.alpha.iter().enumerate() {
            if a > 1e-9 && a < c - 1e-9 {
                assert!((svm_score(&m, &x[t]).unwrap() - y[t]).abs() < 1e-3);
            }
        }
        assert!(kkt_violation(&x, &y, c, gamma, &sol) < 1e-3);
    }
}
