// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multiscale segmentation: Stage 1 at every bandwidth, anchor estimators,
//! clustering of pre-estimators around anchors, and refinement with the
//! cluster bandwidth `G* = floor(3 G_min / 4 + G_max / 4)`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};
use crate::lasso::FitOptions;
use crate::mosum::{self, detection_radius, DetectorSeries, PreEstimate};
use crate::pipeline::{self, check_alpha, ClusterRecord, PhaseTimings, SegmentationResult, SolveCounts};
use crate::refine::{self, Refinement, RefinementPlan};

pub const DEFAULT_ALPHA_MULTISCALE: f64 = 0.75;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleParams {
    pub bandwidths: Vec<usize>,
    /// Grid resolution shared by all bandwidths; `None` uses `r = 1/G_h`.
    pub resolution: Option<f64>,
    pub lambda: f64,
    pub threshold: f64,
    pub alpha: f64,
    pub options: FitOptions,
}

impl MultiscaleParams {
    pub fn new(bandwidths: Vec<usize>, lambda: f64, threshold: f64) -> Self {
        Self {
            bandwidths,
            resolution: None,
            lambda,
            threshold,
            alpha: DEFAULT_ALPHA_MULTISCALE,
            options: FitOptions::default(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_resolution(mut self, r: f64) -> Self {
        self.resolution = Some(r);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub anchor: PreEstimate,
    pub members: Vec<PreEstimate>,
    pub g_min: usize,
    pub g_max: usize,
    /// Location of the member detected at `g_min` (the anchor when it is one).
    pub member_at_g_min: usize,
    pub member_at_g_max: usize,
    pub g_star: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleState {
    pub bandwidths: Vec<usize>,
    pub per_bandwidth: Vec<Vec<PreEstimate>>,
    pub anchors: Vec<PreEstimate>,
    pub clusters: Vec<Cluster>,
}

/// `floor(3 G_min / 4 + G_max / 4)`.
pub fn g_star(g_min: usize, g_max: usize) -> usize {
    (3 * g_min + g_max) / 4
}

fn alpha_interval(pe: &PreEstimate, alpha: f64) -> (i64, i64) {
    let h = detection_radius(alpha, pe.bandwidth) as i64;
    let k = pe.location as i64;
    if h == 0 {
        (k, k)
    } else {
        (k - h + 1, k + h)
    }
}

/// `{k - G - floor(G/2) + 1, ..., k + G + floor(G/2)}` for `G = G(k)`.
pub fn extended_interval(pe: &PreEstimate) -> (i64, i64) {
    let g = pe.bandwidth as i64;
    let k = pe.location as i64;
    (k - g - g / 2 + 1, k + g + g / 2)
}

fn meets(a: (i64, i64), b: (i64, i64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

fn same_record(a: &PreEstimate, b: &PreEstimate) -> bool {
    a.location == b.location && a.bandwidth == b.bandwidth
}

/// Pre-estimators whose detection interval meets no detection interval of
/// a pre-estimator found at a strictly smaller bandwidth. Sorted by
/// location; duplicate locations are kept once (finest bandwidth first).
pub fn identify_anchors(per_bandwidth: &[Vec<PreEstimate>], alpha: f64) -> Vec<PreEstimate> {
    let all: Vec<&PreEstimate> = per_bandwidth.iter().flatten().collect();
    let mut anchors: Vec<PreEstimate> = all
        .iter()
        .filter(|cand| {
            let iv = alpha_interval(cand, alpha);
            all.iter()
                .filter(|other| other.bandwidth < cand.bandwidth)
                .all(|other| !meets(alpha_interval(other, alpha), iv))
        })
        .map(|pe| **pe)
        .collect();
    anchors.sort_by(|a, b| a.location.cmp(&b.location).then(a.bandwidth.cmp(&b.bandwidth)));
    anchors.dedup_by(|b, a| a.location == b.location);
    anchors
}

/// Clusters pre-estimators around anchors: a record joins cluster `j` when
/// its detection interval meets the `j`th anchor's, and its extended
/// interval avoids every other anchor's detection interval.
pub fn cluster_pre_estimators(per_bandwidth: &[Vec<PreEstimate>], anchors: &[PreEstimate], alpha: f64) -> Vec<Cluster> {
    let anchor_iv: Vec<(i64, i64)> = anchors.iter().map(|a| alpha_interval(a, alpha)).collect();
    anchors
        .iter()
        .enumerate()
        .map(|(j, anchor)| {
            let mut members = vec![*anchor];
            for pe in per_bandwidth.iter().flatten() {
                if same_record(pe, anchor) {
                    continue;
                }
                let joins = meets(alpha_interval(pe, alpha), anchor_iv[j])
                    && anchor_iv
                        .iter()
                        .enumerate()
                        .all(|(jj, iv)| jj == j || !meets(extended_interval(pe), *iv));
                if joins {
                    members.push(*pe);
                }
            }
            members.sort_by(|a, b| a.bandwidth.cmp(&b.bandwidth).then(a.location.cmp(&b.location)));
            let g_min = members.iter().map(|m| m.bandwidth).min().expect("anchor is a member");
            let g_max = members.iter().map(|m| m.bandwidth).max().expect("anchor is a member");
            let pick = |g: usize| {
                if anchor.bandwidth == g {
                    anchor.location
                } else {
                    members.iter().find(|m| m.bandwidth == g).expect("bandwidth present").location
                }
            };
            Cluster {
                anchor: *anchor,
                g_min,
                g_max,
                member_at_g_min: pick(g_min),
                member_at_g_max: pick(g_max),
                g_star: g_star(g_min, g_max),
                members,
            }
        })
        .collect()
}

/// Argmin of `Q` over `{k_m - G* + 1, ..., k_m + G*}` with plug-ins on
/// `(k_m - G_min - G*, k_m - G_min]` and `(k_m + G_min, k_m + G_min + G*]`.
pub fn refine_cluster(data: &Dataset, cluster: &Cluster, lambda: f64, options: FitOptions) -> Result<Refinement> {
    let plan = RefinementPlan::cluster(data.n(), cluster.member_at_g_min, cluster.g_min, cluster.g_star);
    refine::refine(data, plan, lambda, options)
}

fn check_bandwidths(n: usize, bandwidths: &[usize]) -> Result<Vec<usize>> {
    if bandwidths.is_empty() {
        return Err(MosegError::param("at least one bandwidth is required"));
    }
    let mut gs = bandwidths.to_vec();
    gs.sort_unstable();
    gs.dedup();
    if let Some(&g) = gs.iter().find(|&&g| g == 0 || 2 * g > n) {
        return Err(MosegError::param(format!("bandwidth G = {g} requires 1 <= G and 2G <= n = {n}")));
    }
    Ok(gs)
}

/// Anchors, clusters and cluster refinement from given Stage-1 output.
/// `lambda_for` maps a bandwidth to the penalty used for its plug-ins;
/// `segment_lambda` is used for the final per-segment fits.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish_multiscale(
    data: &Dataset,
    bandwidths: Vec<usize>,
    per_bandwidth: Vec<Vec<PreEstimate>>,
    lambda_for: &(dyn Fn(usize) -> f64 + Sync),
    segment_lambda: f64,
    threshold: Option<f64>,
    alpha: f64,
    resolution: Option<f64>,
    options: FitOptions,
    mut solves: SolveCounts,
    mut timings: PhaseTimings,
) -> Result<(SegmentationResult, MultiscaleState)> {
    let clock = Instant::now();
    let anchors = identify_anchors(&per_bandwidth, alpha);
    let clusters = cluster_pre_estimators(&per_bandwidth, &anchors, alpha);
    let refinements: Vec<Refinement> = clusters
        .par_iter()
        .map(|c| refine_cluster(data, c, lambda_for(c.g_min), options))
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    for (c, r) in clusters.iter().zip(&refinements) {
        solves.refinement += r.solves;
        if r.fallback {
            warnings.push(format!(
                "plug-in window collapsed for cluster anchored at {}; kept unrefined",
                c.anchor.location
            ));
        }
    }
    let refined: Vec<(usize, f64)> = refinements
        .iter()
        .zip(&clusters)
        .map(|(r, c)| (r.location, c.anchor.detector_value))
        .collect();
    let kept = pipeline::dedup_refined(&refined);
    if kept.len() < refined.len() {
        warnings.push(format!("{} cluster(s) refined onto an existing location", refined.len() - kept.len()));
    }
    let change_points: Vec<usize> = kept.iter().map(|&i| refined[i].0).collect();
    timings.refinement += clock.elapsed().as_secs_f64();
    let records = kept
        .iter()
        .map(|&i| {
            let c = &clusters[i];
            ClusterRecord {
                anchor: c.anchor,
                members: c.members.clone(),
                g_min: c.g_min,
                g_max: c.g_max,
                g_star: c.g_star,
                refined: refined[i].0,
            }
        })
        .collect();
    let clock = Instant::now();
    let (segments, seg_solves) = pipeline::fit_segments(data, &change_points, segment_lambda, options, &mut warnings)?;
    solves.segments += seg_solves;
    timings.segments += clock.elapsed().as_secs_f64();
    let result = SegmentationResult {
        method: "moseg.ms".to_string(),
        n: data.n(),
        p: data.p(),
        q_hat: change_points.len(),
        change_points,
        pre_estimates: per_bandwidth.iter().flatten().copied().collect(),
        clusters: records,
        segments,
        bandwidths: bandwidths.clone(),
        lambda: segment_lambda,
        threshold,
        alpha,
        resolution,
        warnings,
        solves,
        timings,
    };
    let state = MultiscaleState {
        bandwidths,
        per_bandwidth,
        anchors,
        clusters,
    };
    Ok((result, state))
}

/// Full multiscale pipeline; also returns the intermediate state and the
/// per-bandwidth detector series.
pub fn run_moseg_ms_detailed(
    data: &Dataset,
    params: &MultiscaleParams,
) -> Result<(SegmentationResult, MultiscaleState, Vec<DetectorSeries>)> {
    check_alpha(params.alpha)?;
    let bandwidths = check_bandwidths(data.n(), &params.bandwidths)?;
    let clock = Instant::now();
    let stage1: Vec<(DetectorSeries, Vec<PreEstimate>)> = bandwidths
        .par_iter()
        .map(|&g| {
            let grid = mosum::build_grid(data.n(), g, pipeline::resolution_for(params.resolution, g))?;
            pipeline::stage1(data, &grid, params.lambda, params.threshold, params.alpha, params.options)
        })
        .collect::<Result<_>>()?;
    let solves = SolveCounts {
        stage1: stage1.iter().map(|(s, _)| s.solves).sum(),
        ..SolveCounts::default()
    };
    let timings = PhaseTimings {
        stage1: clock.elapsed().as_secs_f64(),
        ..PhaseTimings::default()
    };
    let (series, per_bandwidth): (Vec<_>, Vec<_>) = stage1.into_iter().unzip();
    let lambda = params.lambda;
    let (result, state) = finish_multiscale(
        data,
        bandwidths,
        per_bandwidth,
        &move |_| lambda,
        lambda,
        Some(params.threshold),
        params.alpha,
        params.resolution,
        params.options,
        solves,
        timings,
    )?;
    Ok((result, state, series))
}

pub fn run_moseg_ms(data: &Dataset, params: &MultiscaleParams) -> Result<SegmentationResult> {
    run_moseg_ms_detailed(data, params).map(|(r, _, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pe(location: usize, bandwidth: usize) -> PreEstimate {
        PreEstimate {
            location,
            detector_value: 1.0,
            bandwidth,
            radius: detection_radius(0.75, bandwidth),
        }
    }

    #[test]
    fn single_bandwidth_all_anchors() {
        let lists = vec![vec![pe(100, 50), pe(200, 50)]];
        let anchors = identify_anchors(&lists, 0.75);
        assert_eq!(anchors.len(), 2);
    }

    #[test]
    fn overlapping_coarser_estimate_is_not_anchor() {
        assert_eq!(alpha_interval(&pe(100, 50), 0.75), (64, 137));
        assert_eq!(alpha_interval(&pe(110, 80), 0.75), (51, 170));
        let lists = vec![vec![pe(100, 50)], vec![pe(110, 80)]];
        let anchors = identify_anchors(&lists, 0.75);
        assert_eq!(anchors, vec![pe(100, 50)]);
    }

    #[test]
    fn disjoint_estimates_are_both_anchors() {
        let lists = vec![vec![pe(100, 50)], vec![pe(300, 80)]];
        let anchors = identify_anchors(&lists, 0.75);
        assert_eq!(anchors, vec![pe(100, 50), pe(300, 80)]);
    }

    #[test]
    fn clustering_interval_arithmetic() {
        let anchors = vec![pe(100, 50), pe(300, 50)];
        let joins = pe(140, 80);
        assert_eq!(alpha_interval(&joins, 0.75), (81, 200));
        assert_eq!(extended_interval(&joins), (21, 260));
        let excluded = pe(220, 80);
        assert_eq!(extended_interval(&excluded), (101, 340));
        let lists = vec![anchors.clone(), vec![joins, excluded]];
        let clusters = cluster_pre_estimators(&lists, &anchors, 0.75);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].members, vec![pe(100, 50), pe(140, 80)]);
        assert_eq!(clusters[0].g_min, 50);
        assert_eq!(clusters[0].g_max, 80);
        assert_eq!(clusters[0].g_star, (150 + 80) / 4);
        assert_eq!(clusters[1].members, vec![pe(300, 50)]);
    }

    #[test]
    fn single_anchor_collects_every_overlap() {
        let anchors = vec![pe(100, 50)];
        let lists = vec![anchors.clone(), vec![pe(120, 80)], vec![pe(90, 100)]];
        let clusters = cluster_pre_estimators(&lists, &anchors, 0.75);
        assert_eq!(clusters[0].members.len(), 3);
        assert_eq!(clusters[0].g_star, (150 + 100) / 4);
        assert_eq!(clusters[0].member_at_g_max, 90);
    }

    #[test]
    fn g_star_formula() {
        assert_eq!(g_star(60, 100), 70);
        assert_eq!(g_star(77, 77), 77);
    }

    #[test]
    fn bandwidth_validation() {
        assert!(check_bandwidths(100, &[]).is_err());
        assert!(check_bandwidths(100, &[20, 51]).is_err());
        assert_eq!(check_bandwidths(100, &[40, 20, 40]).unwrap(), vec![20, 40]);
    }
}
