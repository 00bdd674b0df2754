// SPDX-License-Identifier: MIT OR Apache-2.0

//! Helpers shared by the integration tests: an exact Lasso oracle for tiny
//! dimensions, a KKT checker and small data generators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use moseg::Dataset;

/// `sum (y - X b)^2 + pen * |b|_1`, summed directly over rows.
pub fn lasso_objective(x: &Array2<f64>, y: &Array1<f64>, beta: &Array1<f64>, pen: f64) -> f64 {
    let rss: f64 = x
        .rows()
        .into_iter()
        .zip(y.iter())
        .map(|(row, &yt)| (yt - row.dot(beta)).powi(2))
        .sum();
    rss + pen * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions
/// `2 x_j'(y - X b) = pen sign(b_j)` (active) and `|2 x_j'(y - X b)| <= pen`
/// (inactive).
pub fn kkt_violation(x: &Array2<f64>, y: &Array1<f64>, beta: &Array1<f64>, pen: f64) -> f64 {
    let resid = y - &x.dot(beta);
    let grad = x.t().dot(&resid) * 2.0;
    grad.iter()
        .zip(beta.iter())
        .map(|(&g, &b)| {
            if b != 0.0 {
                (g - pen * b.signum()).abs()
            } else {
                (g.abs() - pen).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Exact minimiser by enumeration over supports and sign patterns. Every
/// candidate solves the stationarity equations on its support; those whose
/// signs agree with the pattern are feasible points, and the optimum is one
/// of them (some optimal solution has linearly independent support columns).
pub fn enumerate_lasso(x: &Array2<f64>, y: &Array1<f64>, pen: f64) -> (Array1<f64>, f64) {
    let p = x.ncols();
    assert!(p <= 10, "enumeration is exponential in p");
    let xm = DMatrix::from_fn(x.nrows(), p, |i, j| x[(i, j)]);
    let yv = DVector::from_iterator(y.len(), y.iter().copied());
    let gram = xm.transpose() * &xm;
    let xty = xm.transpose() * &yv;
    let mut best = Array1::zeros(p);
    let mut best_obj = lasso_objective(x, y, &best, pen);
    for mask in 1u32..(1 << p) {
        let support: Vec<usize> = (0..p).filter(|j| mask & (1 << j) != 0).collect();
        let k = support.len();
        let block = DMatrix::from_fn(k, k, |a, b| gram[(support[a], support[b])]);
        let Some(chol) = block.clone().cholesky() else {
            continue;
        };
        // Reject numerically singular supports.
        let diag_min = (0..k).map(|a| chol.l()[(a, a)]).fold(f64::INFINITY, f64::min);
        let diag_max = (0..k).map(|a| chol.l()[(a, a)]).fold(0.0, f64::max);
        if diag_min < 1e-7 * diag_max {
            continue;
        }
        for signs in 0u32..(1 << k) {
            let s = DVector::from_fn(k, |a, _| if signs & (1 << a) != 0 { -1.0 } else { 1.0 });
            let rhs = DVector::from_fn(k, |a, _| xty[support[a]]) - &s * (pen / 2.0);
            let b = chol.solve(&rhs);
            if (0..k).any(|a| b[a] * s[a] <= 0.0) {
                continue;
            }
            let mut full = Array1::zeros(p);
            for (a, &j) in support.iter().enumerate() {
                full[j] = b[a];
            }
            let obj = lasso_objective(x, y, &full, pen);
            if obj < best_obj {
                best_obj = obj;
                best = full;
            }
        }
    }
    (best, best_obj)
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, n: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal))
}

/// Piecewise regression `y_t = x_t' beta_j + sigma e_t` with Gaussian `x`.
pub fn piecewise<R: Rng>(rng: &mut R, n: usize, change_points: &[usize], betas: &[Vec<f64>], sigma: f64) -> Dataset {
    let p = betas[0].len();
    let x = gaussian_matrix(rng, n, p);
    let y = Array1::from_shape_fn(n, |t| {
        let seg = change_points.iter().filter(|&&c| t >= c).count();
        let mean: f64 = x.row(t).iter().zip(&betas[seg]).map(|(a, b)| a * b).sum();
        let e: f64 = rng.sample(StandardNormal);
        mean + sigma * e
    });
    Dataset::new(y, x).unwrap()
}
