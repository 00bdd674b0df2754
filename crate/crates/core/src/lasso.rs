// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cyclic coordinate-descent Lasso for windowed subproblems.
//!
//! The objective on a window `(s, e]` is
//!
//! ```text
//! sum_{t = s+1}^{e} (Y_t - x_t' beta)^2 + lambda * sqrt(e - s) * |beta|_1
//! ```
//!
//! i.e. the residual sum of squares is *not* averaged, and the penalty grows
//! with the square root of the window length. Penalty values are therefore
//! comparable across windows of different lengths.
//!
//! The solver works on the window Gram matrix, so one `O(w p^2)` setup is
//! shared by every penalty on a path. Cyclic sweeps are interleaved with a
//! Newton step on the current support, which matters when the window is
//! shorter than `p` and the penalty is small.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};

/// Sweep cap for coordinate descent.
pub const MAX_SWEEPS: usize = 10_000;
/// Relative tolerance on the largest coordinate move within a sweep.
pub const COORD_TOLERANCE: f64 = 1e-7;
/// Restricted sweeps between support Newton steps.
const ACTIVE_SWEEPS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Divide each column by its standard deviation over the fitted rows.
    pub standardize: bool,
    /// Fit an unpenalised intercept by centring within the fitted rows.
    pub intercept: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoProblem {
    pub start: usize,
    pub end: usize,
    pub lambda: f64,
    pub options: FitOptions,
}

impl LassoProblem {
    pub fn new(start: usize, end: usize, lambda: f64) -> Self {
        Self {
            start,
            end,
            lambda,
            options: FitOptions::default(),
        }
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        data.check_window(self.start, self.end)?;
        check_lambda(self.lambda)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub beta: Array1<f64>,
    pub intercept: f64,
    /// Objective at `beta`; with standardisation the penalty is taken on the
    /// standardised coefficients, i.e. `lambda sqrt(w) sum_j sd_j |beta_j|`.
    pub objective: f64,
    pub n_iters: usize,
    pub converged: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(MosegError::param(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Sufficient statistics of one fitted row set, on the working
/// (centred and/or standardised) scale.
struct Design {
    gram: Array2<f64>,
    xty: Array1<f64>,
    /// Column divisor; 0 marks a pinned (zero-variance) column.
    scale: Array1<f64>,
    x_mean: Array1<f64>,
    y_mean: f64,
    rows: usize,
}

impl Design {
    fn new(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, options: FitOptions) -> Self {
        let rows = x.nrows();
        let p = x.ncols();
        let (x_mean, y_mean) = if options.intercept {
            (x.mean_axis(Axis(0)).expect("rows >= 2"), y.mean().expect("rows >= 2"))
        } else {
            (Array1::zeros(p), 0.0)
        };
        let mut work = x.to_owned();
        let mut yw = y.to_owned();
        if options.intercept {
            work -= &x_mean;
            yw -= y_mean;
        }
        let scale = if options.standardize {
            let denom = rows as f64;
            let mut sd = Array1::zeros(p);
            for (j, col) in x.axis_iter(Axis(1)).enumerate() {
                let m = col.sum() / rows as f64;
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / denom;
                sd[j] = var.sqrt();
            }
            for (j, mut col) in work.axis_iter_mut(Axis(1)).enumerate() {
                if sd[j] > 0.0 {
                    col.mapv_inplace(|v| v / sd[j]);
                } else {
                    col.fill(0.0);
                }
            }
            sd
        } else {
            Array1::ones(p)
        };
        let gram = work.t().dot(&work);
        let xty = work.t().dot(&yw);
        Self {
            gram,
            xty,
            scale,
            x_mean,
            y_mean,
            rows,
        }
    }

    fn penalty(&self, lambda: f64) -> f64 {
        lambda * (self.rows as f64).sqrt()
    }

    fn lambda_max(&self) -> f64 {
        let top = self.xty.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        2.0 * top / (self.rows as f64).sqrt()
    }

    fn pinned(&self, j: usize) -> bool {
        self.scale[j] == 0.0 || self.gram[[j, j]] <= 0.0
    }

    /// One cyclic pass over `coords`; returns the largest coordinate move.
    fn sweep(&self, coords: &[usize], half_pen: f64, beta: &mut Array1<f64>, corr: &mut Array1<f64>) -> f64 {
        let mut max_move = 0.0_f64;
        for &j in coords {
            let gjj = self.gram[[j, j]];
            let old = beta[j];
            let rho = corr[j] + gjj * old;
            let new = soft_threshold(rho, half_pen) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                corr.scaled_add(-delta, &self.gram.row(j));
                max_move = max_move.max(delta.abs());
            }
        }
        max_move
    }

    /// Line search along a Newton direction for the objective restricted
    /// to the current sign orthant of the support, stopping where the first
    /// coefficient reaches zero. A small ridge keeps the direction defined
    /// when the support block is singular; the step length is exact for the
    /// unridged objective, so the objective never increases. Returns false
    /// when no step was taken.
    fn support_step(&self, active: &[usize], half_pen: f64, beta: &mut Array1<f64>, corr: &Array1<f64>) -> bool {
        let k = active.len();
        if k == 0 {
            return false;
        }
        let block = DMatrix::from_fn(k, k, |a, b| self.gram[[active[a], active[b]]]);
        let ridge = 1e-10 * (block.trace() / k as f64).max(f64::MIN_POSITIVE);
        let mut shifted = block.clone();
        for a in 0..k {
            shifted[(a, a)] += ridge;
        }
        let Some(chol) = shifted.cholesky() else {
            return false;
        };
        let resid = DVector::from_fn(k, |a, _| corr[active[a]] - half_pen * beta[active[a]].signum());
        let dir = chol.solve(&resid);
        let slope = resid.dot(&dir);
        if !(slope > 0.0) {
            return false;
        }
        let curvature = dir.dot(&(&block * &dir));
        let mut step = if curvature > 0.0 { slope / curvature } else { f64::INFINITY };
        let mut blocking = None;
        for (a, &j) in active.iter().enumerate() {
            if beta[j] * dir[a] < 0.0 {
                let t = -beta[j] / dir[a];
                if t < step {
                    step = t;
                    blocking = Some(j);
                }
            }
        }
        if !step.is_finite() {
            return false;
        }
        for (a, &j) in active.iter().enumerate() {
            beta[j] += step * dir[a];
        }
        if let Some(j) = blocking {
            beta[j] = 0.0;
        }
        true
    }

    /// Coordinate descent in working coordinates. Full sweeps alternate
    /// with sweeps restricted to the nonzero coordinates; convergence is
    /// only declared after two consecutive quiet full sweeps.
    fn descend(&self, lambda: f64, warm: Option<Array1<f64>>) -> (Array1<f64>, usize, bool) {
        let p = self.xty.len();
        let half_pen = 0.5 * self.penalty(lambda);
        let free: Vec<usize> = (0..p).filter(|&j| !self.pinned(j)).collect();
        let mut beta = warm.unwrap_or_else(|| Array1::zeros(p));
        for j in 0..p {
            if self.pinned(j) {
                beta[j] = 0.0;
            }
        }
        let bound = |b: &Array1<f64>| COORD_TOLERANCE * (1.0 + b.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
        let mut corr = &self.xty - &self.gram.dot(&beta);
        let mut sweeps = 0;
        let mut confirming = false;
        while sweeps < MAX_SWEEPS {
            sweeps += 1;
            let max_move = self.sweep(&free, half_pen, &mut beta, &mut corr);
            if max_move < bound(&beta) {
                if confirming {
                    return (beta, sweeps, true);
                }
                // Refresh the running correlations to shed accumulated
                // rounding, then require one more quiet sweep.
                corr = &self.xty - &self.gram.dot(&beta);
                confirming = true;
                continue;
            }
            confirming = false;
            let active: Vec<usize> = free.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            let mut settled = false;
            for _ in 0..ACTIVE_SWEEPS {
                if sweeps >= MAX_SWEEPS {
                    break;
                }
                sweeps += 1;
                if self.sweep(&active, half_pen, &mut beta, &mut corr) < bound(&beta) {
                    settled = true;
                    break;
                }
            }
            let support: Vec<usize> = active.into_iter().filter(|&j| beta[j] != 0.0).collect();
            if !settled && self.support_step(&support, half_pen, &mut beta, &corr) {
                corr = &self.xty - &self.gram.dot(&beta);
            }
        }
        (beta, sweeps, false)
    }

    fn to_original(&self, work: &Array1<f64>) -> (Array1<f64>, f64) {
        let beta = Array1::from_iter(
            work.iter()
                .zip(self.scale.iter())
                .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 }),
        );
        let intercept = self.y_mean - self.x_mean.dot(&beta);
        (beta, intercept)
    }

    fn to_working(&self, beta: ArrayView1<'_, f64>) -> Array1<f64> {
        &beta * &self.scale
    }
}

fn objective(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    beta: &Array1<f64>,
    intercept: f64,
    weights: &Array1<f64>,
    penalty: f64,
) -> f64 {
    let fitted = x.dot(beta);
    let rss: f64 = y
        .iter()
        .zip(fitted.iter())
        .map(|(yt, ft)| (yt - ft - intercept).powi(2))
        .sum();
    let l1: f64 = beta.iter().zip(weights.iter()).map(|(b, w)| (b * w).abs()).sum();
    rss + penalty * l1
}

fn check_rows(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(MosegError::DimensionMismatch(format!(
            "{} design rows for {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < 2 {
        return Err(MosegError::InvalidWindow {
            start: 0,
            end: x.nrows(),
            n: x.nrows(),
            reason: "window shorter than 2",
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(MosegError::NonFinite("lasso input".into()));
    }
    Ok(())
}

fn finish(
    design: &Design,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    work: Array1<f64>,
    n_iters: usize,
    converged: bool,
) -> LassoFit {
    let (beta, intercept) = design.to_original(&work);
    let objective = objective(x, y, &beta, intercept, &design.scale, design.penalty(lambda));
    LassoFit {
        beta,
        intercept,
        objective,
        n_iters,
        converged,
    }
}

/// Fits the Lasso on an arbitrary set of rows (penalty scaled by the row count).
pub fn fit_rows(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    options: FitOptions,
    warm_start: Option<ArrayView1<'_, f64>>,
) -> Result<LassoFit> {
    check_rows(x, y)?;
    check_lambda(lambda)?;
    if let Some(w) = warm_start {
        if w.len() != x.ncols() {
            return Err(MosegError::DimensionMismatch(format!(
                "warm start has length {} but p = {}",
                w.len(),
                x.ncols()
            )));
        }
    }
    let design = Design::new(x, y, options);
    let warm = warm_start.map(|w| design.to_working(w));
    let (work, iters, converged) = design.descend(lambda, warm);
    Ok(finish(&design, x, y, lambda, work, iters, converged))
}

/// Solves the windowed Lasso problem, optionally warm-started.
pub fn solve(data: &Dataset, problem: &LassoProblem, warm_start: Option<ArrayView1<'_, f64>>) -> Result<LassoFit> {
    problem.validate(data)?;
    let (x, y) = data.window(problem.start, problem.end);
    fit_rows(x, y, problem.lambda, problem.options, warm_start)
}

/// Solves one window for several penalties, sharing the Gram matrix and
/// warm-starting from the next larger penalty. Fits are returned in the
/// order of `lambdas`.
pub fn solve_path(
    data: &Dataset,
    start: usize,
    end: usize,
    lambdas: &[f64],
    options: FitOptions,
) -> Result<Vec<LassoFit>> {
    data.check_window(start, end)?;
    for &l in lambdas {
        check_lambda(l)?;
    }
    let (x, y) = data.window(start, end);
    let design = Design::new(x, y, options);
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].total_cmp(&lambdas[a]));
    let mut out: Vec<Option<LassoFit>> = vec![None; lambdas.len()];
    let mut warm: Option<Array1<f64>> = None;
    for idx in order {
        let (work, iters, converged) = design.descend(lambdas[idx], warm.take());
        warm = Some(work.clone());
        out[idx] = Some(finish(&design, x, y, lambdas[idx], work, iters, converged));
    }
    Ok(out.into_iter().map(|f| f.expect("every index visited")).collect())
}

/// Smallest penalty at which the window fit is identically zero:
/// `max_j |2 sum_t x_jt Y_t| / sqrt(e - s)`.
pub fn lambda_max(data: &Dataset, start: usize, end: usize) -> Result<f64> {
    lambda_max_with(data, start, end, FitOptions::default())
}

pub fn lambda_max_with(data: &Dataset, start: usize, end: usize, options: FitOptions) -> Result<f64> {
    data.check_window(start, end)?;
    let (x, y) = data.window(start, end);
    Ok(Design::new(x, y, options).lambda_max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_data() -> Dataset {
        Dataset::new(array![2.0, 2.0, 2.0, 2.0], Array2::ones((4, 1))).unwrap()
    }

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let beta = Array1::from_shape_fn(p, |j| if j % 2 == 0 { 1.5 } else { 0.0 });
        let y = x.dot(&beta) + Array1::from_shape_fn(n, |_| rng.random_range(-0.3..0.3));
        Dataset::new(y, x).unwrap()
    }

    #[test]
    fn scalar_soft_threshold_example() {
        let fit = solve(&constant_data(), &LassoProblem::new(0, 4, 1.0), None).unwrap();
        assert!((fit.beta[0] - 1.75).abs() < 1e-12);
        assert!(fit.converged);
        // subgradient: -2 x'(y - x b) + lambda sqrt(n) sign(b) = 0
        let grad = -2.0 * 4.0 * (2.0 - fit.beta[0]) + 1.0 * 2.0;
        assert!(grad.abs() < 1e-10);
    }

    #[test]
    fn lambda_max_examples() {
        let d = constant_data();
        assert_eq!(lambda_max(&d, 0, 4).unwrap(), 8.0);
        assert_eq!(solve(&d, &LassoProblem::new(0, 4, 8.0), None).unwrap().beta[0], 0.0);
        assert!(solve(&d, &LassoProblem::new(0, 4, 7.9), None).unwrap().beta[0] > 0.0);

        let zero = Dataset::new(Array1::zeros(5), Array2::ones((5, 2))).unwrap();
        assert_eq!(lambda_max(&zero, 0, 5).unwrap(), 0.0);
    }

    #[test]
    fn lambda_max_zeroes_random_window() {
        let d = random_data(15, 4, 3);
        let lmax = lambda_max(&d, 0, 15).unwrap();
        let at = solve(&d, &LassoProblem::new(0, 15, lmax), None).unwrap();
        assert!(at.beta.iter().all(|b| *b == 0.0));
        let below = solve(&d, &LassoProblem::new(0, 15, 0.99 * lmax), None).unwrap();
        assert!(below.beta.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn objective_is_recomputable() {
        let d = random_data(20, 5, 11);
        let prob = LassoProblem::new(2, 18, 0.5);
        let fit = solve(&d, &prob, None).unwrap();
        let (x, y) = d.window(2, 18);
        let r = &y - &x.dot(&fit.beta);
        let direct = r.dot(&r) + 0.5 * 16f64.sqrt() * fit.beta.iter().map(|b| b.abs()).sum::<f64>();
        assert!((direct - fit.objective).abs() <= 1e-10 * direct.abs());
    }

    #[test]
    fn warm_start_reaches_same_objective() {
        let d = random_data(25, 6, 5);
        let prob = LassoProblem::new(0, 25, 0.3);
        let cold = solve(&d, &prob, None).unwrap();
        let warm_vec = Array1::from_elem(6, 3.0);
        let warm = solve(&d, &prob, Some(warm_vec.view())).unwrap();
        assert!((cold.objective - warm.objective).abs() <= 1e-8 * cold.objective);
    }

    #[test]
    fn path_matches_individual_solves() {
        let d = random_data(30, 5, 8);
        let lambdas = [0.01, 1.0, 0.1, 3.0];
        let path = solve_path(&d, 0, 30, &lambdas, FitOptions::default()).unwrap();
        for (l, fit) in lambdas.iter().zip(&path) {
            let single = solve(&d, &LassoProblem::new(0, 30, *l), None).unwrap();
            assert!((single.objective - fit.objective).abs() <= 1e-8 * single.objective.max(1e-12));
        }
    }

    #[test]
    fn deterministic() {
        let d = random_data(20, 5, 2);
        let prob = LassoProblem::new(0, 20, 0.2);
        let a = solve(&d, &prob, None).unwrap();
        let b = solve(&d, &prob, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_variance_column_is_pinned_under_standardisation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        x.column_mut(1).fill(7.0);
        let y = x.column(0).to_owned() * 2.0;
        let d = Dataset::new(y, x).unwrap();
        let opts = FitOptions {
            standardize: true,
            intercept: true,
        };
        let fit = solve(&d, &LassoProblem::new(0, 12, 0.01).with_options(opts), None).unwrap();
        assert_eq!(fit.beta[1], 0.0);
        assert!((fit.beta[0] - 2.0).abs() < 0.05);
        assert!(fit.beta.iter().all(|b| b.is_finite()));
    }

    #[test]
    fn intercept_recovers_offset() {
        let x = Array2::from_shape_fn((10, 1), |(t, _)| t as f64);
        let y = x.column(0).mapv(|v| 3.0 + 0.5 * v);
        let d = Dataset::new(y, x).unwrap();
        let opts = FitOptions {
            standardize: false,
            intercept: true,
        };
        let fit = solve(&d, &LassoProblem::new(0, 10, 0.0).with_options(opts), None).unwrap();
        assert!((fit.beta[0] - 0.5).abs() < 1e-6);
        assert!((fit.intercept - 3.0).abs() < 1e-5);
    }

    #[test]
    fn error_paths() {
        let d = random_data(10, 3, 1);
        assert!(matches!(
            solve(&d, &LassoProblem::new(4, 5, 0.1), None),
            Err(MosegError::InvalidWindow { .. })
        ));
        assert!(solve(&d, &LassoProblem::new(0, 11, 0.1), None).is_err());
        assert!(solve(&d, &LassoProblem::new(0, 10, -1.0), None).is_err());
        let bad_warm = Array1::zeros(2);
        assert!(matches!(
            solve(&d, &LassoProblem::new(0, 10, 0.1), Some(bad_warm.view())),
            Err(MosegError::DimensionMismatch(_))
        ));
        let x = array![[1.0], [f64::NAN]];
        assert!(matches!(
            fit_rows(x.view(), array![1.0, 2.0].view(), 0.1, FitOptions::default(), None),
            Err(MosegError::NonFinite(_))
        ));
    }
}
