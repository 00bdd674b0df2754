// SPDX-License-Identifier: MIT OR Apache-2.0

//! Stage 1: the moving-sum contrast of adjacent local Lasso fits,
//!
//! ```text
//! T_k(G) = sqrt(G / 2) * | beta_hat(k, k + G) - beta_hat(k - G, k) |_2,
//! ```
//!
//! evaluated on a (possibly coarse) grid, and the thresholded
//! local-maximiser rule that turns it into pre-estimators.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};
use crate::lasso::{self, FitOptions};

const FLOOR_EPS: f64 = 1e-9;

/// `floor(a * g)` robust to representation error in `a` (so that
/// `r = 1/G` yields a step of exactly one).
pub fn floor_scaled(a: f64, g: usize) -> usize {
    (a * g as f64 + FLOOR_EPS).floor().max(0.0) as usize
}

/// Half-width `floor(alpha G)` of a detection interval.
pub fn detection_radius(alpha: f64, bandwidth: usize) -> usize {
    floor_scaled(alpha, bandwidth)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub bandwidth: usize,
    pub resolution: f64,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Distinct window starts needed to evaluate the detector; every window
    /// has length `G`, so a start identifies a window.
    pub fn window_starts(&self) -> Vec<usize> {
        let g = self.bandwidth;
        let mut starts: Vec<usize> = self.points.iter().flat_map(|&k| [k - g, k]).collect();
        starts.sort_unstable();
        starts.dedup();
        starts
    }
}

/// The grid `{G + floor(rG) m : 0 <= m <= floor((n - 2G) / (rG))} ∪ {n - G}`.
pub fn build_grid(n: usize, bandwidth: usize, resolution: f64) -> Result<GridSpec> {
    if bandwidth == 0 || 2 * bandwidth > n {
        return Err(MosegError::param(format!(
            "bandwidth G = {bandwidth} requires 1 <= G and 2G <= n = {n}"
        )));
    }
    let g = bandwidth as f64;
    if !(resolution.is_finite() && resolution * g >= 1.0 - FLOOR_EPS && resolution < 1.0) {
        return Err(MosegError::param(format!(
            "resolution r = {resolution} must lie in [1/G, 1) for G = {bandwidth}"
        )));
    }
    let step = floor_scaled(resolution, bandwidth).max(1);
    let m_max = (((n - 2 * bandwidth) as f64) / (resolution * g) + FLOOR_EPS).floor() as usize;
    let mut points: Vec<usize> = (0..=m_max)
        .map(|m| bandwidth + step * m)
        .filter(|&k| k <= n - bandwidth)
        .collect();
    points.push(n - bandwidth);
    points.sort_unstable();
    points.dedup();
    Ok(GridSpec {
        n,
        bandwidth,
        resolution,
        points,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorSeries {
    pub grid: GridSpec,
    pub lambda: f64,
    /// `values[i] = T_{k_i}(G)` for `k_i = grid.points[i]`.
    pub values: Vec<f64>,
    /// Number of Lasso solves performed to build this series.
    pub solves: usize,
    window_fits: Option<BTreeMap<usize, Array1<f64>>>,
}

impl DetectorSeries {
    /// Series from precomputed values, e.g. to re-threshold a stored scan.
    pub fn from_values(grid: GridSpec, lambda: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points.len() {
            return Err(MosegError::DimensionMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                grid.points.len()
            )));
        }
        Ok(Self {
            grid,
            lambda,
            values,
            solves: 0,
            window_fits: None,
        })
    }

    pub fn bandwidth(&self) -> usize {
        self.grid.bandwidth
    }

    pub fn points(&self) -> &[usize] {
        &self.grid.points
    }

    /// Fit on `(k_i - G, k_i]`, when fits were retained.
    pub fn left_fit(&self, i: usize) -> Option<&Array1<f64>> {
        let k = self.grid.points[i];
        self.window_fits.as_ref()?.get(&(k - self.grid.bandwidth))
    }

    /// Fit on `(k_i, k_i + G]`, when fits were retained.
    pub fn right_fit(&self, i: usize) -> Option<&Array1<f64>> {
        let k = self.grid.points[i];
        self.window_fits.as_ref()?.get(&k)
    }

    pub fn value_at(&self, k: usize) -> Option<f64> {
        self.grid.points.binary_search(&k).ok().map(|i| self.values[i])
    }

    pub fn drop_fits(&mut self) {
        self.window_fits = None;
    }

    /// CSV with header `k,T_k,bandwidth`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,T_k,bandwidth")?;
        for (k, v) in self.grid.points.iter().zip(&self.values) {
            writeln!(out, "{k},{v:.16e},{}", self.grid.bandwidth)?;
        }
        Ok(())
    }
}

fn contrast(bandwidth: usize, left: &Array1<f64>, right: &Array1<f64>) -> f64 {
    let d2: f64 = left.iter().zip(right.iter()).map(|(l, r)| (r - l).powi(2)).sum();
    (bandwidth as f64 / 2.0).sqrt() * d2.sqrt()
}

pub fn compute_detector(data: &Dataset, grid: &GridSpec, lambda: f64) -> Result<DetectorSeries> {
    compute_detector_with(data, grid, lambda, FitOptions::default(), true)
}

pub fn compute_detector_with(
    data: &Dataset,
    grid: &GridSpec,
    lambda: f64,
    options: FitOptions,
    retain_fits: bool,
) -> Result<DetectorSeries> {
    let mut out = compute_detector_path(data, grid, &[lambda], options, retain_fits)?;
    Ok(out.pop().expect("one penalty"))
}

/// Detector series for several penalties at once. Each distinct window is
/// solved along the whole penalty path (warm-started, sharing its Gram
/// matrix); windows are distributed over the rayon pool and reassembled in
/// grid order, so the output does not depend on the thread count.
pub fn compute_detector_path(
    data: &Dataset,
    grid: &GridSpec,
    lambdas: &[f64],
    options: FitOptions,
    retain_fits: bool,
) -> Result<Vec<DetectorSeries>> {
    if grid.n != data.n() {
        return Err(MosegError::DimensionMismatch(format!(
            "grid built for n = {} but data has n = {}",
            grid.n,
            data.n()
        )));
    }
    let g = grid.bandwidth;
    let starts = grid.window_starts();
    let fits: Vec<Vec<Array1<f64>>> = starts
        .par_iter()
        .map(|&s| {
            lasso::solve_path(data, s, s + g, lambdas, options)
                .map(|path| path.into_iter().map(|f| f.beta).collect())
        })
        .collect::<Result<_>>()?;

    let mut per_lambda: Vec<BTreeMap<usize, Array1<f64>>> = vec![BTreeMap::new(); lambdas.len()];
    for (s, path) in starts.iter().zip(fits) {
        for (li, beta) in path.into_iter().enumerate() {
            per_lambda[li].insert(*s, beta);
        }
    }

    Ok(lambdas
        .iter()
        .zip(per_lambda)
        .map(|(&lambda, cache)| {
            let values = grid
                .points
                .iter()
                .map(|&k| contrast(g, &cache[&(k - g)], &cache[&k]))
                .collect();
            DetectorSeries {
                grid: grid.clone(),
                lambda,
                values,
                solves: starts.len(),
                window_fits: retain_fits.then_some(cache),
            }
        })
        .collect())
}

/// Largest per-window `lambda_max` over the Stage-1 windows of `grid`.
pub fn stage1_lambda_max(data: &Dataset, grid: &GridSpec, options: FitOptions) -> Result<f64> {
    let g = grid.bandwidth;
    grid.window_starts()
        .iter()
        .map(|&s| lasso::lambda_max_with(data, s, s + g, options))
        .try_fold(0.0_f64, |m, v| v.map(|v| m.max(v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreEstimate {
    pub location: usize,
    pub detector_value: f64,
    pub bandwidth: usize,
    /// `floor(alpha G)`.
    pub radius: usize,
}

impl PreEstimate {
    /// `{k - floor(alpha G) + 1, ..., k + floor(alpha G)}`; a zero radius
    /// degenerates to `{k}`.
    pub fn detection_interval(&self) -> (usize, usize) {
        if self.radius == 0 {
            (self.location, self.location)
        } else {
            (self.location + 1 - self.radius, self.location + self.radius)
        }
    }
}

/// Thresholded local maximisers: every grid point `k` with `T_k > D` that is
/// the argmax of `T` over the grid points in its detection interval. Ties
/// inside an interval go to the smallest grid point.
pub fn select_pre_estimators(series: &DetectorSeries, threshold: f64, alpha: f64) -> Vec<PreEstimate> {
    let g = series.bandwidth();
    let radius = detection_radius(alpha, g);
    let pts = series.points();
    let vals = &series.values;
    let mut out = Vec::new();
    for (i, (&k, &v)) in pts.iter().zip(vals).enumerate() {
        if !(v > threshold) {
            continue;
        }
        let cand = PreEstimate {
            location: k,
            detector_value: v,
            bandwidth: g,
            radius,
        };
        let (lo, hi) = cand.detection_interval();
        let first = pts.partition_point(|&t| t < lo);
        let last = pts.partition_point(|&t| t <= hi);
        let mut best = first;
        for j in first..last {
            if vals[j] > vals[best] {
                best = j;
            }
        }
        if best == i {
            out.push(cand);
        }
    }
    out
}
