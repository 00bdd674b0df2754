// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-bandwidth two-stage segmentation and the result type shared by
//! every segmentation entry point.

use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};
use crate::lasso::{self, FitOptions, LassoProblem};
use crate::mosum::{self, DetectorSeries, GridSpec, PreEstimate};
use crate::refine::{self, RefinementPlan};

/// Localisation constant for single-bandwidth runs.
pub const DEFAULT_ALPHA_SINGLE: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosegParams {
    pub bandwidth: usize,
    /// Grid resolution `r`; `None` is the finest grid `r = 1/G`.
    pub resolution: Option<f64>,
    pub lambda: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub options: FitOptions,
}

impl MosegParams {
    pub fn new(bandwidth: usize, lambda: f64, threshold: f64) -> Self {
        Self {
            bandwidth,
            resolution: None,
            lambda,
            threshold,
            alpha: DEFAULT_ALPHA_SINGLE,
            options: FitOptions::default(),
        }
    }

    pub fn with_resolution(mut self, r: f64) -> Self {
        self.resolution = Some(r);
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

pub(crate) fn resolution_for(resolution: Option<f64>, bandwidth: usize) -> f64 {
    resolution.unwrap_or(1.0 / bandwidth as f64)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(MosegError::param(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

pub(crate) fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold >= 0.0) || threshold.is_infinite() {
        return Err(MosegError::param(format!("threshold D must be finite and >= 0, got {threshold}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounts {
    pub stage1: usize,
    pub refinement: usize,
    pub segments: usize,
    pub cross_validation: usize,
}

/// Wall-clock seconds per phase. Timings are not part of a result's
/// identity: they are never serialised and always compare equal.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimings {
    pub stage1: f64,
    pub refinement: f64,
    pub cross_validation: f64,
    pub segments: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.stage1 + self.refinement + self.cross_validation + self.segments
    }
}

impl PartialEq for PhaseTimings {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseEntry {
    pub index: usize,
    pub value: f64,
}

/// Final Lasso fit on the segment `(start, end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub start: usize,
    pub end: usize,
    pub intercept: f64,
    pub beta_sparse: Vec<SparseEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub anchor: PreEstimate,
    pub members: Vec<PreEstimate>,
    #[serde(rename = "G_min")]
    pub g_min: usize,
    #[serde(rename = "G_max")]
    pub g_max: usize,
    #[serde(rename = "G_star")]
    pub g_star: usize,
    pub refined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResult {
    pub method: String,
    pub n: usize,
    pub p: usize,
    pub q_hat: usize,
    pub change_points: Vec<usize>,
    /// Stage-1 pre-estimators the refinement started from.
    pub pre_estimates: Vec<PreEstimate>,
    pub clusters: Vec<ClusterRecord>,
    pub segments: Vec<SegmentFit>,
    pub bandwidths: Vec<usize>,
    pub lambda: f64,
    /// `None` when the threshold was chosen implicitly by cross validation.
    pub threshold: Option<f64>,
    pub alpha: f64,
    pub resolution: Option<f64>,
    pub warnings: Vec<String>,
    pub solves: SolveCounts,
    #[serde(skip)]
    pub timings: PhaseTimings,
}

impl SegmentationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Stage 1 at one bandwidth: detector series and thresholded local maximisers.
pub fn stage1(
    data: &Dataset,
    grid: &GridSpec,
    lambda: f64,
    threshold: f64,
    alpha: f64,
    options: FitOptions,
) -> Result<(DetectorSeries, Vec<PreEstimate>)> {
    check_alpha(alpha)?;
    check_threshold(threshold)?;
    let series = mosum::compute_detector_with(data, grid, lambda, options, false)?;
    let pre = mosum::select_pre_estimators(&series, threshold, alpha);
    Ok((series, pre))
}

/// Final Lasso fits on the segments delimited by `change_points`.
pub fn fit_segments(
    data: &Dataset,
    change_points: &[usize],
    lambda: f64,
    options: FitOptions,
    warnings: &mut Vec<String>,
) -> Result<(Vec<SegmentFit>, usize)> {
    let mut bounds = Vec::with_capacity(change_points.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(change_points);
    bounds.push(data.n());
    let fits: Vec<Option<(Array1<f64>, f64)>> = bounds
        .par_windows(2)
        .map(|w| {
            if w[1] - w[0] < 2 {
                return Ok(None);
            }
            let fit = lasso::solve(data, &LassoProblem::new(w[0], w[1], lambda).with_options(options), None)?;
            Ok(Some((fit.beta, fit.intercept)))
        })
        .collect::<Result<_>>()?;
    let mut solves = 0;
    let segments = bounds
        .windows(2)
        .zip(fits)
        .map(|(w, fit)| {
            let (beta, intercept) = match fit {
                Some(f) => {
                    solves += 1;
                    f
                }
                None => {
                    warnings.push(format!("segment ({}, {}] shorter than 2; zero fit reported", w[0], w[1]));
                    (Array1::zeros(data.p()), 0.0)
                }
            };
            SegmentFit {
                start: w[0],
                end: w[1],
                intercept,
                beta_sparse: beta
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(index, &value)| SparseEntry { index, value })
                    .collect(),
            }
        })
        .collect();
    Ok((segments, solves))
}

/// Sorts refined locations and resolves collisions in favour of the record
/// with the larger detector value. Returns the kept indices into `refined`.
pub(crate) fn dedup_refined(refined: &[(usize, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..refined.len()).collect();
    order.sort_by(|&a, &b| {
        refined[a]
            .0
            .cmp(&refined[b].0)
            .then(refined[b].1.total_cmp(&refined[a].1))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::with_capacity(order.len());
    for i in order {
        if kept.last().is_some_and(|&j| refined[j].0 == refined[i].0) {
            continue;
        }
        kept.push(i);
    }
    kept
}

/// Refines the given pre-estimators at bandwidth `g` and assembles a result.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_single(
    data: &Dataset,
    method: &str,
    pre: Vec<PreEstimate>,
    bandwidth: usize,
    lambda: f64,
    threshold: Option<f64>,
    alpha: f64,
    resolution: Option<f64>,
    options: FitOptions,
    mut solves: SolveCounts,
    mut timings: PhaseTimings,
) -> Result<SegmentationResult> {
    let n = data.n();
    let clock = Instant::now();
    let refinements: Vec<refine::Refinement> = pre
        .par_iter()
        .map(|pe| refine::refine(data, RefinementPlan::single(n, pe.location, bandwidth), lambda, options))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    for (pe, r) in pre.iter().zip(&refinements) {
        solves.refinement += r.solves;
        if r.fallback {
            warnings.push(format!("plug-in window collapsed at pre-estimate {}; kept unrefined", pe.location));
        }
    }
    let refined: Vec<(usize, f64)> = refinements
        .iter()
        .zip(&pre)
        .map(|(r, pe)| (r.location, pe.detector_value))
        .collect();
    let kept = dedup_refined(&refined);
    let change_points: Vec<usize> = kept.iter().map(|&i| refined[i].0).collect();
    timings.refinement += clock.elapsed().as_secs_f64();
    let clusters = kept
        .iter()
        .map(|&i| ClusterRecord {
            anchor: pre[i],
            members: vec![pre[i]],
            g_min: bandwidth,
            g_max: bandwidth,
            g_star: bandwidth,
            refined: refined[i].0,
        })
        .collect();
    let clock = Instant::now();
    let (segments, seg_solves) = fit_segments(data, &change_points, lambda, options, &mut warnings)?;
    solves.segments += seg_solves;
    timings.segments += clock.elapsed().as_secs_f64();
    Ok(SegmentationResult {
        method: method.to_string(),
        n,
        p: data.p(),
        q_hat: change_points.len(),
        change_points,
        pre_estimates: pre,
        clusters,
        segments,
        bandwidths: vec![bandwidth],
        lambda,
        threshold,
        alpha,
        resolution,
        warnings,
        solves,
        timings,
    })
}

/// Single-bandwidth two-stage segmentation; also returns the Stage-1 series.
pub fn run_moseg_with_series(data: &Dataset, params: &MosegParams) -> Result<(SegmentationResult, DetectorSeries)> {
    let g = params.bandwidth;
    let grid = mosum::build_grid(data.n(), g, resolution_for(params.resolution, g))?;
    let clock = Instant::now();
    let (series, pre) = stage1(data, &grid, params.lambda, params.threshold, params.alpha, params.options)?;
    let solves = SolveCounts {
        stage1: series.solves,
        ..SolveCounts::default()
    };
    let timings = PhaseTimings {
        stage1: clock.elapsed().as_secs_f64(),
        ..PhaseTimings::default()
    };
    let result = finish_single(
        data,
        "moseg",
        pre,
        g,
        params.lambda,
        Some(params.threshold),
        params.alpha,
        params.resolution,
        params.options,
        solves,
        timings,
    )?;
    Ok((result, series))
}

pub fn run_moseg(data: &Dataset, params: &MosegParams) -> Result<SegmentationResult> {
    run_moseg_with_series(data, params).map(|(r, _)| r)
}
