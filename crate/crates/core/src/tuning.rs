// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bandwidth sets and joint selection of the penalty and the number of
//! change points by odd/even sample-splitting cross validation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};
use crate::lasso::{self, FitOptions};
use crate::mosum::{self, PreEstimate};
use crate::multiscale;
use crate::pipeline::{self, check_alpha, PhaseTimings, SegmentationResult, SolveCounts};
use crate::refine::{self, RefinementPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMode {
    Fibonacci,
    Practical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthRule {
    pub mode: BandwidthMode,
    pub g1: usize,
    pub n: usize,
    /// Number of practical-rule terms; defaults to 3.
    pub h_cap: Option<usize>,
}

pub const DEFAULT_PRACTICAL_TERMS: usize = 3;

/// Fibonacci rule: `G_m = G_{m-1} + G_{m-2}` from `G_0 = G_1`, all terms
/// below `floor(n/2)`. Practical rule: `floor((h + 2) G_1 / 3)` for
/// `h = 1..=H`, dropping terms above `floor(n/2) - 1`.
pub fn generate_bandwidths(rule: &BandwidthRule) -> Result<Vec<usize>> {
    let half = rule.n / 2;
    if rule.g1 < 2 || rule.g1 >= half {
        return Err(MosegError::param(format!(
            "G1 = {} must satisfy 2 <= G1 < floor(n/2) = {half}",
            rule.g1
        )));
    }
    let mut out = match rule.mode {
        BandwidthMode::Fibonacci => {
            let (mut prev, mut cur) = (rule.g1, rule.g1);
            let mut v = vec![cur];
            loop {
                let next = prev + cur;
                if next >= half {
                    break;
                }
                v.push(next);
                (prev, cur) = (cur, next);
            }
            v
        }
        BandwidthMode::Practical => {
            let h = rule.h_cap.unwrap_or(DEFAULT_PRACTICAL_TERMS);
            if h == 0 {
                return Err(MosegError::param("practical rule needs at least one term"));
            }
            (1..=h)
                .map(|h| (h + 2) * rule.g1 / 3)
                .filter(|&g| g < half)
                .collect()
        }
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

const RECOMMEND_C: f64 = 3.2;
const RECOMMEND_C1: f64 = -0.449;
const RECOMMEND_C2: f64 = 1.665;

/// `floor(exp((log(3.2 / log n) - 1.665 log sqrt(log p)) / -0.449))`,
/// clamped to `[10, floor(n/2) - 1]`.
pub fn recommend_bandwidth(n: usize, p: usize) -> usize {
    let ln_n = (n.max(3) as f64).ln();
    let ln_p = (p.max(3) as f64).ln();
    let level = RECOMMEND_C / ln_n;
    let g = ((level.ln() - RECOMMEND_C2 * ln_p.sqrt().ln()) / RECOMMEND_C1).exp();
    let g = if g.is_finite() { g.floor() as usize } else { usize::MAX };
    g.max(10).min((n / 2).saturating_sub(1))
}

pub const DEFAULT_GRID_SIZE: usize = 5;
pub const DEFAULT_GRID_RATIO: f64 = 1e-3;

/// `size` values spaced geometrically from `ratio * lambda_max` up to
/// `lambda_max`, in decreasing order.
pub fn geometric_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..size)
            .map(|i| lambda_max * ratio.powf(i as f64 / (size - 1) as f64))
            .collect(),
    }
}

/// Default penalty grid for bandwidth `g`, anchored at the largest
/// `lambda_max` over the Stage-1 windows.
pub fn default_lambda_grid(data: &Dataset, g: usize, resolution: f64, options: FitOptions) -> Result<Vec<f64>> {
    let grid = mosum::build_grid(data.n(), g, resolution)?;
    let lmax = mosum::stage1_lambda_max(data, &grid, options)?;
    if lmax > 0.0 {
        Ok(geometric_grid(lmax, DEFAULT_GRID_SIZE, DEFAULT_GRID_RATIO))
    } else {
        Ok(vec![0.0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSettings {
    pub bandwidth: usize,
    pub resolution: Option<f64>,
    pub alpha: f64,
    /// `None` uses [`default_lambda_grid`].
    pub lambda_grid: Option<Vec<f64>>,
    pub options: FitOptions,
}

impl CvSettings {
    pub fn new(bandwidth: usize) -> Self {
        Self {
            bandwidth,
            resolution: None,
            alpha: pipeline::DEFAULT_ALPHA_SINGLE,
            lambda_grid: None,
            options: FitOptions::default(),
        }
    }
}

/// A refined location with the pre-estimator it came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEstimate {
    pub refined: usize,
    pub pre_estimate: PreEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub bandwidth: usize,
    pub lambda_grid: Vec<f64>,
    /// `scores[i][m]`: CV score at `lambda_grid[i]` of the top-`m` model.
    pub scores: Vec<Vec<f64>>,
    /// Candidates per penalty, by decreasing detector value.
    pub ranked: Vec<Vec<RankedEstimate>>,
    pub chosen_lambda_index: usize,
    pub chosen_lambda: f64,
    pub chosen_m: usize,
    /// Chosen change points, ascending.
    pub selected: Vec<usize>,
    /// Segments whose training half had fewer than two rows.
    pub fallback_segments: usize,
    pub solves: SolveCounts,
    /// Stage-1 path and per-penalty scoring times.
    #[serde(skip)]
    pub timings: PhaseTimings,
}

impl CvReport {
    /// Nested model `m` at penalty index `i`, ascending.
    pub fn model(&self, i: usize, m: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self.ranked[i][..m].iter().map(|r| r.refined).collect();
        v.sort_unstable();
        v
    }

    /// Top `m` pre-estimators at penalty index `i`, by location.
    pub fn top_pre_estimates(&self, i: usize, m: usize) -> Vec<PreEstimate> {
        let mut v: Vec<PreEstimate> = self.ranked[i][..m].iter().map(|r| r.pre_estimate).collect();
        v.sort_by_key(|p| p.location);
        v
    }

    /// Score grid as CSV: `lambda,m,cv_score`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "lambda,m,cv_score")?;
        for (lambda, row) in self.lambda_grid.iter().zip(&self.scores) {
            for (m, s) in row.iter().enumerate() {
                writeln!(out, "{lambda:.16e},{m},{s:.16e}")?;
            }
        }
        Ok(())
    }
}

fn split_rows(start: usize, end: usize) -> (Vec<usize>, Vec<usize>) {
    // 1-based odd rows are 0-based even indices.
    (start..end).partition(|t| t % 2 == 0)
}

/// Validation error of one segment `(start, end]`: Lasso on the odd rows,
/// squared prediction error on the even rows. Returns the error, whether
/// the training half was too short, and the number of solves.
pub fn segment_cv_error(
    data: &Dataset,
    start: usize,
    end: usize,
    lambda: f64,
    options: FitOptions,
) -> Result<(f64, bool, usize)> {
    let (train, test) = split_rows(start, end);
    if test.is_empty() {
        return Ok((0.0, train.len() < 2, 0));
    }
    let (beta, intercept, fallback, solves) = if train.len() < 2 {
        (Array1::zeros(data.p()), 0.0, true, 0)
    } else {
        let x: Array2<f64> = data.x().select(Axis(0), &train);
        let y: Array1<f64> = data.y().select(Axis(0), &train);
        let fit = lasso::fit_rows(x.view(), y.view(), lambda, options, None)?;
        (fit.beta, fit.intercept, false, 1)
    };
    let err = test
        .iter()
        .map(|&t| {
            let r = data.y()[t] - intercept - data.x().row(t).dot(&beta);
            r * r
        })
        .sum();
    Ok((err, fallback, solves))
}

fn rank_candidates(pre: &[PreEstimate], refined: &[usize]) -> Vec<RankedEstimate> {
    let pairs: Vec<(usize, f64)> = refined.iter().zip(pre).map(|(&r, p)| (r, p.detector_value)).collect();
    let mut ranked: Vec<RankedEstimate> = pipeline::dedup_refined(&pairs)
        .into_iter()
        .map(|i| RankedEstimate {
            refined: refined[i],
            pre_estimate: pre[i],
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.pre_estimate
            .detector_value
            .total_cmp(&a.pre_estimate.detector_value)
            .then(a.refined.cmp(&b.refined))
    });
    ranked
}

fn segments_of(cps: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut bounds = Vec::with_capacity(cps.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(cps);
    bounds.push(n);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Per-penalty candidates, model scores, refinement solves, scoring solves
/// and fallback segments.
type PenaltyScores = (Vec<RankedEstimate>, Vec<f64>, usize, usize, usize);

/// Cross validation over `settings.lambda_grid` for one bandwidth. For each
/// penalty, Stage 1 (threshold 0) and Stage 2 run on the full data; refined
/// locations are ranked by detector value and the nested models
/// `m = 0, 1, ...` are scored. Ties go to the smallest `m`, then the
/// largest penalty.
pub fn cross_validate(data: &Dataset, settings: &CvSettings) -> Result<CvReport> {
    check_alpha(settings.alpha)?;
    if data.n() < 4 {
        return Err(MosegError::param("cross validation needs n >= 4"));
    }
    let g = settings.bandwidth;
    let r = pipeline::resolution_for(settings.resolution, g);
    let grid = mosum::build_grid(data.n(), g, r)?;
    let lambdas = match &settings.lambda_grid {
        Some(l) if l.is_empty() => return Err(MosegError::param("empty penalty grid")),
        Some(l) => l.clone(),
        None => default_lambda_grid(data, g, r, settings.options)?,
    };
    let clock = Instant::now();
    let series = mosum::compute_detector_path(data, &grid, &lambdas, settings.options, false)?;
    let mut timings = PhaseTimings {
        stage1: clock.elapsed().as_secs_f64(),
        ..PhaseTimings::default()
    };
    let clock = Instant::now();
    // Each Stage-1 window is solved once per penalty.
    let mut solves = SolveCounts {
        stage1: grid.window_starts().len() * lambdas.len(),
        ..SolveCounts::default()
    };

    let per_lambda: Vec<PenaltyScores> = lambdas
        .par_iter()
        .zip(series.par_iter())
        .map(|(&lambda, s)| {
            let pre = mosum::select_pre_estimators(s, 0.0, settings.alpha);
            let refinements: Vec<refine::Refinement> = pre
                .iter()
                .map(|pe| refine::refine(data, RefinementPlan::single(data.n(), pe.location, g), lambda, settings.options))
                .collect::<Result<_>>()?;
            let refine_solves = refinements.iter().map(|r| r.solves).sum();
            let refined: Vec<usize> = refinements.iter().map(|r| r.location).collect();
            let ranked = rank_candidates(&pre, &refined);

            let models: Vec<Vec<(usize, usize)>> = (0..=ranked.len())
                .map(|m| {
                    let mut cps: Vec<usize> = ranked[..m].iter().map(|e| e.refined).collect();
                    cps.sort_unstable();
                    segments_of(&cps, data.n())
                })
                .collect();
            let unique: BTreeSet<(usize, usize)> = models.iter().flatten().copied().collect();
            let mut errors = BTreeMap::new();
            let (mut fallbacks, mut cv_solves) = (0, 0);
            for &(a, b) in &unique {
                let (err, fb, sv) = segment_cv_error(data, a, b, lambda, settings.options)?;
                fallbacks += usize::from(fb);
                cv_solves += sv;
                errors.insert((a, b), err);
            }
            let scores = models
                .iter()
                .map(|segs| segs.iter().map(|s| errors[s]).sum())
                .collect();
            Ok((ranked, scores, refine_solves, cv_solves, fallbacks))
        })
        .collect::<Result<_>>()?;

    timings.cross_validation = clock.elapsed().as_secs_f64();
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, (_, scores, _, _, _)) in per_lambda.iter().enumerate() {
        for (m, &s) in scores.iter().enumerate() {
            let better = match best {
                None => true,
                Some((bi, bm, bs)) => {
                    s < bs || (s == bs && (m < bm || (m == bm && lambdas[i] > lambdas[bi])))
                }
            };
            if better {
                best = Some((i, m, s));
            }
        }
    }
    let (li, m, _) = best.expect("model m = 0 always scored");
    let mut ranked = Vec::with_capacity(lambdas.len());
    let mut scores = Vec::with_capacity(lambdas.len());
    let mut fallback_segments = 0;
    for (rk, sc, rs, cs, fb) in per_lambda {
        ranked.push(rk);
        scores.push(sc);
        solves.refinement += rs;
        solves.cross_validation += cs;
        fallback_segments += fb;
    }
    let mut report = CvReport {
        bandwidth: g,
        chosen_lambda: lambdas[li],
        lambda_grid: lambdas,
        scores,
        ranked,
        chosen_lambda_index: li,
        chosen_m: m,
        selected: Vec::new(),
        fallback_segments,
        solves,
        timings,
    };
    report.selected = report.model(li, m);
    Ok(report)
}

/// Single-bandwidth segmentation with `(lambda, q)` chosen by cross
/// validation.
pub fn run_moseg_cv(data: &Dataset, settings: &CvSettings) -> Result<(SegmentationResult, CvReport)> {
    let report = cross_validate(data, settings)?;
    let pre = report.top_pre_estimates(report.chosen_lambda_index, report.chosen_m);
    let solves = SolveCounts {
        stage1: report.solves.stage1,
        refinement: report.solves.refinement,
        segments: 0,
        cross_validation: report.solves.cross_validation,
    };
    let mut result = pipeline::finish_single(
        data,
        "moseg.cv",
        pre,
        settings.bandwidth,
        report.chosen_lambda,
        None,
        settings.alpha,
        settings.resolution,
        settings.options,
        solves,
        report.timings,
    )?;
    if report.fallback_segments > 0 {
        result.warnings.push(format!(
            "{} cross-validation segment(s) had fewer than two training rows",
            report.fallback_segments
        ));
    }
    Ok((result, report))
}

/// Multiscale segmentation with cross validation at every bandwidth. The
/// top `m_h*` pre-estimators at `lambda_h*` form each bandwidth's list;
/// clusters are refined with the penalty chosen at their finest bandwidth
/// and the segment fits use the penalty chosen at the finest bandwidth.
pub fn run_moseg_ms_cv(
    data: &Dataset,
    bandwidths: &[usize],
    resolution: Option<f64>,
    alpha: f64,
    lambda_grid: Option<Vec<f64>>,
    options: FitOptions,
) -> Result<(SegmentationResult, Vec<CvReport>)> {
    check_alpha(alpha)?;
    let mut gs = bandwidths.to_vec();
    gs.sort_unstable();
    gs.dedup();
    if gs.is_empty() {
        return Err(MosegError::param("at least one bandwidth is required"));
    }
    let reports: Vec<CvReport> = gs
        .iter()
        .map(|&g| {
            cross_validate(
                data,
                &CvSettings {
                    bandwidth: g,
                    resolution,
                    alpha,
                    lambda_grid: lambda_grid.clone(),
                    options,
                },
            )
        })
        .collect::<Result<_>>()?;
    let per_bandwidth: Vec<Vec<PreEstimate>> = reports
        .iter()
        .map(|r| r.top_pre_estimates(r.chosen_lambda_index, r.chosen_m))
        .collect();
    let chosen: BTreeMap<usize, f64> = reports.iter().map(|r| (r.bandwidth, r.chosen_lambda)).collect();
    let mut solves = SolveCounts::default();
    for r in &reports {
        solves.stage1 += r.solves.stage1;
        solves.refinement += r.solves.refinement;
        solves.cross_validation += r.solves.cross_validation;
    }
    let mut timings = PhaseTimings::default();
    for r in &reports {
        timings.stage1 += r.timings.stage1;
        timings.cross_validation += r.timings.cross_validation;
    }
    let lambda_for = |g: usize| chosen[&g];
    let (mut result, _) = multiscale::finish_multiscale(
        data,
        gs.clone(),
        per_bandwidth,
        &lambda_for,
        chosen[&gs[0]],
        None,
        alpha,
        resolution,
        options,
        solves,
        timings,
    )?;
    result.method = "moseg.ms.cv".to_string();
    let fb: usize = reports.iter().map(|r| r.fallback_segments).sum();
    if fb > 0 {
        result
            .warnings
            .push(format!("{fb} cross-validation segment(s) had fewer than two training rows"));
    }
    Ok((result, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(mode: BandwidthMode, g1: usize, n: usize, h_cap: Option<usize>) -> BandwidthRule {
        BandwidthRule { mode, g1, n, h_cap }
    }

    #[test]
    fn fibonacci_by_hand() {
        let gs = generate_bandwidths(&rule(BandwidthMode::Fibonacci, 10, 200, None)).unwrap();
        assert_eq!(gs, vec![10, 20, 30, 50, 80]);
    }

    #[test]
    fn fibonacci_single_term() {
        let gs = generate_bandwidths(&rule(BandwidthMode::Fibonacci, 99, 200, None)).unwrap();
        assert_eq!(gs, vec![99]);
    }

    #[test]
    fn practical_terms() {
        let gs = generate_bandwidths(&rule(BandwidthMode::Practical, 60, 300, Some(3))).unwrap();
        assert_eq!(gs, vec![60, 80, 100]);
        let capped = generate_bandwidths(&rule(BandwidthMode::Practical, 60, 200, Some(5))).unwrap();
        assert_eq!(capped, vec![60, 80]);
    }

    #[test]
    fn bandwidth_rule_errors() {
        assert!(generate_bandwidths(&rule(BandwidthMode::Fibonacci, 1, 200, None)).is_err());
        assert!(generate_bandwidths(&rule(BandwidthMode::Fibonacci, 100, 200, None)).is_err());
        assert!(generate_bandwidths(&rule(BandwidthMode::Practical, 10, 200, Some(0))).is_err());
    }

    #[test]
    fn recommended_bandwidth_pinned() {
        // (3.2 / ln 300)^(1/c1) * (ln 100)^(-c2 / (2 c1))
        let oracle = (3.2 / 300f64.ln()).powf(1.0 / -0.449) * 100f64.ln().powf(1.665 / (2.0 * 0.449));
        assert!((oracle - 61.5).abs() < 0.1, "{oracle}");
        assert_eq!(recommend_bandwidth(300, 100), oracle.floor() as usize);
        assert_eq!(recommend_bandwidth(300, 100), 61);
    }

    #[test]
    fn recommended_bandwidth_clamps() {
        assert_eq!(recommend_bandwidth(20, 2), 9);
        let g = recommend_bandwidth(1_000_000, 2);
        assert!((10..500_000).contains(&g));
        assert_eq!(recommend_bandwidth(40, 10_000), 19);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(2.0, 5, 1e-3);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 2.0);
        assert!((g[4] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        for w in g.windows(3) {
            assert!((w[0] / w[1] - w[1] / w[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_response_selects_empty_model() {
        let n = 40;
        let x = Array2::from_shape_fn((n, 2), |(t, j)| ((t * 7 + j * 3) % 5) as f64 - 2.0);
        let d = Dataset::new(Array1::zeros(n), x).unwrap();
        let mut s = CvSettings::new(10);
        s.lambda_grid = Some(vec![0.5, 0.1]);
        let rep = cross_validate(&d, &s).unwrap();
        assert!(rep.scores.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(rep.chosen_m, 0);
        assert_eq!(rep.chosen_lambda, 0.5);
        assert!(rep.selected.is_empty());
    }

    #[test]
    fn one_break_prefers_one_change() {
        let n = 60;
        let y = Array1::from_shape_fn(n, |t| if t < 30 { 0.0 } else { 3.0 });
        let d = Dataset::new(y, Array2::ones((n, 1))).unwrap();
        let mut s = CvSettings::new(15);
        s.lambda_grid = Some(vec![0.0]);
        let rep = cross_validate(&d, &s).unwrap();
        // m = 0: one constant fitted on odd rows, mean 1.5; every even row errs by 1.5.
        assert!((rep.scores[0][0] - 30.0 * 2.25).abs() < 1e-9);
        assert!(rep.scores[0][1] < 1e-12);
        assert_eq!(rep.chosen_m, 1);
        assert_eq!(rep.selected, vec![30]);
    }

    #[test]
    fn nested_models() {
        let n = 120;
        let y = Array1::from_shape_fn(n, |t| [0.0, 2.0, -1.0][(t >= 40) as usize + (t >= 80) as usize] + 0.1 * ((t * 37 % 11) as f64 - 5.0) / 5.0);
        let d = Dataset::new(y, Array2::ones((n, 1))).unwrap();
        let mut s = CvSettings::new(20);
        s.lambda_grid = Some(vec![0.0, 1.0]);
        let rep = cross_validate(&d, &s).unwrap();
        for (i, ranked) in rep.ranked.iter().enumerate() {
            assert!(ranked.windows(2).all(|w| w[0].pre_estimate.detector_value >= w[1].pre_estimate.detector_value));
            for m in 0..ranked.len() {
                let small: BTreeSet<usize> = rep.model(i, m).into_iter().collect();
                let big: BTreeSet<usize> = rep.model(i, m + 1).into_iter().collect();
                assert!(small.is_subset(&big));
                assert_eq!(big.len(), m + 1);
            }
        }
        assert_eq!(rep.selected, vec![40, 80]);
        let again = cross_validate(&d, &s).unwrap();
        assert_eq!(again, rep);
    }

    #[test]
    fn parity_split() {
        let (train, test) = split_rows(2, 7);
        assert_eq!(train, vec![2, 4, 6]);
        assert_eq!(test, vec![3, 5]);
    }

    #[test]
    fn short_segment_falls_back() {
        let d = Dataset::new(Array1::from(vec![1.0, 2.0, 3.0, 4.0]), Array2::ones((4, 1))).unwrap();
        let (err, fallback, solves) = segment_cv_error(&d, 0, 2, 0.0, FitOptions::default()).unwrap();
        assert!(fallback);
        assert_eq!(solves, 0);
        assert_eq!(err, 4.0);
    }

    #[test]
    fn score_csv_layout() {
        let n = 60;
        let y = Array1::from_shape_fn(n, |t| if t < 30 { 0.0 } else { 3.0 });
        let d = Dataset::new(y, Array2::ones((n, 1))).unwrap();
        let mut s = CvSettings::new(15);
        s.lambda_grid = Some(vec![0.0]);
        let rep = cross_validate(&d, &s).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "lambda,m,cv_score");
        assert_eq!(lines.len(), 1 + rep.scores[0].len());
    }
}
