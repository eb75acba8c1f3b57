use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::texture::{FilterBank, Provenance};

const MAX_ITERS: usize = 500;
const TOL: f64 = 1e-6;

/// `(W Wᵀ)^{-1/2} W`
fn symmetric_decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(1e-300).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

/// Learns ICA filters from flattened `size x size` patches: patches are
/// mean-centred (per patch and over the set), PCA-whitened to `n_filters`
/// dimensions, then unmixed by fixed-point iteration with a cubic
/// nonlinearity and symmetric decorrelation.
pub fn train_filterbank(patches: &[Vec<f64>], size: usize, n_filters: usize, seed: u64) -> Result<FilterBank> {
    let d = size * size;
    if n_filters == 0 {
        return Err(Error::invalid("filter bank is empty"));
    }
    if patches.len() < 100 * n_filters {
        return Err(Error::invalid(format!(
            "need at least {} patches for {} filters, got {}",
            100 * n_filters,
            n_filters,
            patches.len()
        )));
    }
    if let Some(p) = patches.iter().find(|p| p.len() != d) {
        return Err(Error::invalid(format!("patch has {} values, expected {}", p.len(), d)));
    }
    let m = patches.len();
    let mut x = DMatrix::<f64>::zeros(d, m);
    for (j, p) in patches.iter().enumerate() {
        let mean = p.iter().sum::<f64>() / d as f64;
        for i in 0..d {
            x[(i, j)] = p[i] - mean;
        }
    }
    for i in 0..d {
        let mean = x.row(i).sum() / m as f64;
        x.row_mut(i).iter_mut().for_each(|v| *v -= mean);
    }

    let cov = &x * x.transpose() / m as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(1e-300))
        .count();
    if rank < n_filters {
        return Err(Error::Degenerate(format!(
            "patch covariance has rank {} < {} filters",
            rank, n_filters
        )));
    }
    let mut v = DMatrix::<f64>::zeros(n_filters, d);
    for (r, &i) in order.iter().take(n_filters).enumerate() {
        let s = 1.0 / eig.eigenvalues[i].sqrt();
        let col = eig.eigenvectors.column(i);
        // fix the eigenvector sign so results do not depend on the solver
        let pivot = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for k in 0..d {
            v[(r, k)] = sign * s * col[k];
        }
    }
    let z = &v * &x;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..n_filters * n_filters).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut w = symmetric_decorrelate(&DMatrix::from_row_slice(n_filters, n_filters, &init));
    for _ in 0..MAX_ITERS {
        let y = &w * &z;
        let g = y.map(|u| u * u * u);
        let gp_mean: Vec<f64> = (0..n_filters)
            .map(|r| y.row(r).iter().map(|u| 3.0 * u * u).sum::<f64>() / m as f64)
            .collect();
        let mut next = &g * z.transpose() / m as f64;
        for r in 0..n_filters {
            for c in 0..n_filters {
                next[(r, c)] -= gp_mean[r] * w[(r, c)];
            }
        }
        let next = symmetric_decorrelate(&next);
        let delta = (0..n_filters)
            .map(|r| (1.0 - next.row(r).dot(&w.row(r)).abs()).abs())
            .fold(0.0, f64::max);
        w = next;
        if delta < TOL {
            break;
        }
    }

    let filters = &w * &v;
    let mut coefficients = Vec::with_capacity(n_filters * d);
    for r in 0..n_filters {
        let row: Vec<f64> = filters.row(r).iter().copied().collect();
        let mean = row.iter().sum::<f64>() / d as f64;
        coefficients.extend(row.into_iter().map(|c| c - mean));
    }
    FilterBank::new(n_filters, size, coefficients, Provenance::Trained)
}
