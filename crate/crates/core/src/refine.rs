// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage 2: location refinement by minimising the two-sided residual
//! objective
//!
//! ```text
//! Q(k; a, b, gL, gR) = sum_{t=a+1}^{k} (Y_t - x_t' gL)^2 + sum_{t=k+1}^{b} (Y_t - x_t' gR)^2
//! ```
//!
//! with plug-in coefficients fitted away from the candidate.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};
use crate::lasso::{self, FitOptions};

fn check_gammas(data: &Dataset, gl: ArrayView1<'_, f64>, gr: ArrayView1<'_, f64>) -> Result<()> {
    if gl.len() != data.p() || gr.len() != data.p() {
        return Err(MosegError::DimensionMismatch(format!(
            "plug-in coefficients of length {} / {} for p = {}",
            gl.len(),
            gr.len(),
            data.p()
        )));
    }
    Ok(())
}

fn check_range(data: &Dataset, a: usize, b: usize) -> Result<()> {
    if a >= b || b > data.n() {
        return Err(MosegError::param(format!(
            "refinement range (a, b] = ({a}, {b}] invalid for n = {}",
            data.n()
        )));
    }
    Ok(())
}

fn squared_residual(data: &Dataset, row: usize, gamma: ArrayView1<'_, f64>) -> f64 {
    let r = data.y()[row] - data.x().row(row).dot(&gamma);
    r * r
}

/// Direct evaluation of `Q(k)` for `a < k <= b`.
pub fn objective_q(
    data: &Dataset,
    k: usize,
    a: usize,
    b: usize,
    gamma_left: ArrayView1<'_, f64>,
    gamma_right: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_range(data, a, b)?;
    check_gammas(data, gamma_left, gamma_right)?;
    if k <= a || k > b {
        return Err(MosegError::param(format!("k = {k} outside ({a}, {b}]")));
    }
    let left: f64 = (a..k).map(|t| squared_residual(data, t, gamma_left)).sum();
    let right: f64 = (k..b).map(|t| squared_residual(data, t, gamma_right)).sum();
    Ok(left + right)
}

/// `Q(k)` for every `k = a+1, ..., b` in one pass. Consecutive values differ
/// by `rL_k - rR_k`, so identical plug-ins give an exactly flat profile.
pub fn q_profile(
    data: &Dataset,
    a: usize,
    b: usize,
    gamma_left: ArrayView1<'_, f64>,
    gamma_right: ArrayView1<'_, f64>,
) -> Result<Vec<f64>> {
    check_range(data, a, b)?;
    check_gammas(data, gamma_left, gamma_right)?;
    let mut q: f64 = (a..b).map(|t| squared_residual(data, t, gamma_right)).sum();
    let mut out = Vec::with_capacity(b - a);
    for t in a..b {
        q += squared_residual(data, t, gamma_left) - squared_residual(data, t, gamma_right);
        out.push(q);
    }
    Ok(out)
}

/// Where a refinement searches and where its plug-ins are fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementPlan {
    pub pre_estimate: usize,
    /// Search over `k` in `{pre - half_width + 1, ..., pre + half_width}`.
    pub half_width: usize,
    pub a: usize,
    pub b: usize,
    pub left_window: (usize, usize),
    pub right_window: (usize, usize),
}

impl RefinementPlan {
    /// Single-bandwidth plan: plug-ins on `(0 ∨ (kL - G), kL]` and
    /// `(kR, (kR + G) ∧ n]` with `kL = k - floor(G/2)`, `kR = k + floor(G/2)`.
    pub fn single(n: usize, pre_estimate: usize, bandwidth: usize) -> Self {
        let half = bandwidth / 2;
        let kl = pre_estimate.saturating_sub(half);
        let kr = (pre_estimate + half).min(n);
        Self {
            pre_estimate,
            half_width: bandwidth,
            a: pre_estimate.saturating_sub(bandwidth),
            b: (pre_estimate + bandwidth).min(n),
            left_window: (kl.saturating_sub(bandwidth), kl),
            right_window: (kr, (kr + bandwidth).min(n)),
        }
    }

    /// Cluster plan: search half-width `G*`, plug-ins on
    /// `(k - Gm - G*, k - Gm]` and `(k + Gm, k + Gm + G*]`, clamped to `[0, n]`.
    pub fn cluster(n: usize, pre_estimate: usize, g_min: usize, g_star: usize) -> Self {
        let left_end = pre_estimate.saturating_sub(g_min);
        let right_start = (pre_estimate + g_min).min(n);
        Self {
            pre_estimate,
            half_width: g_star,
            a: pre_estimate.saturating_sub(g_star),
            b: (pre_estimate + g_star).min(n),
            left_window: (left_end.saturating_sub(g_star), left_end),
            right_window: (right_start, (right_start + g_star).min(n)),
        }
    }

    fn plug_ins_collapse(&self) -> bool {
        let len = |w: (usize, usize)| w.1.saturating_sub(w.0);
        len(self.left_window) < 2 || len(self.right_window) < 2
    }

    /// Candidate locations, clamped to `[1, n - 1]` and to `(a, b]`.
    pub fn search_range(&self, n: usize) -> (usize, usize) {
        let lo = (self.pre_estimate + 1).saturating_sub(self.half_width).max(1).max(self.a + 1);
        let hi = (self.pre_estimate + self.half_width).min(n.saturating_sub(1)).min(self.b);
        (lo, hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementWindow {
    pub plan: RefinementPlan,
    pub beta_left: Array1<f64>,
    pub beta_right: Array1<f64>,
}

/// Argmin of `Q` over the plan's search range. Ties go to the location
/// closest to the pre-estimate, then to the smaller location.
pub fn refine_location(data: &Dataset, window: &RefinementWindow) -> Result<usize> {
    let plan = &window.plan;
    let profile = q_profile(data, plan.a, plan.b, window.beta_left.view(), window.beta_right.view())?;
    let (lo, hi) = plan.search_range(data.n());
    if lo > hi {
        return Ok(plan.pre_estimate);
    }
    let centre = plan.pre_estimate;
    let mut best = lo;
    for k in lo..=hi {
        let (qk, qb) = (profile[k - plan.a - 1], profile[best - plan.a - 1]);
        if qk < qb || (qk == qb && k.abs_diff(centre) < best.abs_diff(centre)) {
            best = k;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub location: usize,
    /// Plug-in windows collapsed; `location` is the pre-estimate.
    pub fallback: bool,
    pub solves: usize,
}

/// Fits the plug-in coefficients for `plan` and refines the location.
pub fn refine(data: &Dataset, plan: RefinementPlan, lambda: f64, options: FitOptions) -> Result<Refinement> {
    if plan.plug_ins_collapse() {
        return Ok(Refinement {
            location: plan.pre_estimate,
            fallback: true,
            solves: 0,
        });
    }
    let fit = |w: (usize, usize)| {
        lasso::solve(data, &lasso::LassoProblem::new(w.0, w.1, lambda).with_options(options), None)
    };
    let window = RefinementWindow {
        plan,
        beta_left: fit(plan.left_window)?.beta,
        beta_right: fit(plan.right_window)?.beta,
    };
    Ok(Refinement {
        location: refine_location(data, &window)?,
        fallback: false,
        solves: 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn step6() -> Dataset {
        Dataset::new(array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0], Array2::ones((6, 1))).unwrap()
    }

    #[test]
    fn hand_evaluated_q() {
        let d = step6();
        let (gl, gr) = (array![0.0], array![1.0]);
        let q = |k| objective_q(&d, k, 0, 6, gl.view(), gr.view()).unwrap();
        assert_eq!(q(3), 0.0);
        assert_eq!(q(2), 1.0);
        assert_eq!(q(4), 1.0);
        let prof = q_profile(&d, 0, 6, gl.view(), gr.view()).unwrap();
        assert_eq!(prof, vec![2.0, 1.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn equal_plugins_give_constant_q() {
        let d = Dataset::new(array![0.3, -1.0, 2.0, 0.5, 0.1], array![[1.0], [2.0], [0.5], [1.5], [3.0]]).unwrap();
        let g = array![0.7];
        let prof = q_profile(&d, 0, 5, g.view(), g.view()).unwrap();
        let total = objective_q(&d, 5, 0, 5, g.view(), g.view()).unwrap();
        assert!(prof.iter().all(|&v| v == prof[0]));
        assert!((prof[0] - total).abs() < 1e-12);
    }

    #[test]
    fn zero_response_zero_q() {
        let d = Dataset::new(Array1::zeros(4), Array2::ones((4, 2))).unwrap();
        let z = Array1::zeros(2);
        assert!(q_profile(&d, 0, 4, z.view(), z.view()).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn refine_recovers_break_with_exact_plugins() {
        let d = step6();
        let plan = RefinementPlan {
            pre_estimate: 3,
            half_width: 3,
            a: 0,
            b: 6,
            left_window: (0, 3),
            right_window: (3, 6),
        };
        let w = RefinementWindow {
            plan,
            beta_left: array![0.0],
            beta_right: array![1.0],
        };
        assert_eq!(refine_location(&d, &w).unwrap(), 3);
        let degenerate = RefinementWindow {
            plan: RefinementPlan { pre_estimate: 2, ..plan },
            beta_left: array![0.5],
            beta_right: array![0.5],
        };
        assert_eq!(refine_location(&d, &degenerate).unwrap(), 2);
    }

    #[test]
    fn single_plan_matches_clamped_windows() {
        let p = RefinementPlan::single(300, 60, 50);
        assert_eq!(p.left_window, (0, 35));
        assert_eq!(p.right_window, (85, 135));
        assert_eq!((p.a, p.b), (10, 110));
        assert_eq!(p.search_range(300), (11, 110));
        let edge = RefinementPlan::single(300, 280, 50);
        assert_eq!(edge.right_window, (300, 300));
        assert_eq!(edge.search_range(300), (231, 299));
    }

    #[test]
    fn collapsed_plugins_fall_back() {
        let d = step6();
        let plan = RefinementPlan::cluster(6, 2, 2, 2);
        let r = refine(&d, plan, 0.0, FitOptions::default()).unwrap();
        assert!(r.fallback);
        assert_eq!(r.location, 2);
    }

    #[test]
    fn noiseless_step_refines_exactly() {
        let n = 200;
        let y = Array1::from_shape_fn(n, |t| if t < 117 { 1.0 } else { -0.5 });
        let d = Dataset::new(y, Array2::ones((n, 1))).unwrap();
        for pre in [100, 110, 120, 130] {
            let r = refine(&d, RefinementPlan::single(n, pre, 40), 0.0, FitOptions::default()).unwrap();
            assert_eq!(r.location, 117, "pre-estimate {pre}");
            assert_eq!(r.solves, 2);
        }
    }

    #[test]
    fn errors() {
        let d = step6();
        let g = array![0.0];
        assert!(objective_q(&d, 0, 0, 6, g.view(), g.view()).is_err());
        assert!(objective_q(&d, 3, 4, 2, g.view(), g.view()).is_err());
        assert!(q_profile(&d, 0, 7, g.view(), g.view()).is_err());
        let bad = array![0.0, 1.0];
        assert!(matches!(
            objective_q(&d, 3, 0, 6, bad.view(), g.view()),
            Err(MosegError::DimensionMismatch(_))
        ));
    }
}
