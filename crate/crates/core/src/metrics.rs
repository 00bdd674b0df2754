// SPDX-License-Identifier: MIT OR Apache-2.0

//! Evaluation: scaled Hausdorff distance, separation rates, replication
//! summaries, and an exhaustive least-squares segmentation used as a test
//! oracle on tiny instances.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MosegError, Result};
use crate::simgen::SimConfig;

fn directed(from: &[usize], to: &[usize]) -> usize {
    from.iter()
        .map(|&a| to.iter().map(|&b| a.abs_diff(b)).min().unwrap_or(0))
        .max()
        .unwrap_or(0)
}

/// `max(max_est min_true |a - b|, max_true min_est |a - b|) / n`; an empty
/// estimate scores 1 against a nonempty truth.
pub fn hausdorff_scaled(estimated: &[usize], truth: &[usize], n: usize) -> f64 {
    if estimated.is_empty() != truth.is_empty() {
        return 1.0;
    }
    let d = directed(estimated, truth).max(directed(truth, estimated));
    (d as f64 / n as f64).min(1.0)
}

/// `(Delta1, Delta2)` with `delta_j = |beta_j - beta_{j-1}|_2`:
/// `Delta1 = min delta_j^2 * min spacing` and
/// `Delta2 = min_j delta_j^2 min(theta_{j+1} - theta_j, theta_j - theta_{j-1})`.
pub fn separation_rates(config: &SimConfig) -> Result<(f64, f64)> {
    if config.q() == 0 {
        return Err(MosegError::Undefined("separation rates need at least one change point".into()));
    }
    let mut bounds = vec![0];
    bounds.extend_from_slice(&config.change_points);
    bounds.push(config.n);
    let delta2: Vec<f64> = config
        .betas
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a).powi(2)).sum())
        .collect();
    let min_spacing = bounds.windows(2).map(|w| w[1] - w[0]).min().expect("two bounds") as f64;
    let d1 = delta2.iter().copied().fold(f64::INFINITY, f64::min) * min_spacing;
    let d2 = (1..=config.q())
        .map(|j| delta2[j - 1] * (bounds[j + 1] - bounds[j]).min(bounds[j] - bounds[j - 1]) as f64)
        .fold(f64::INFINITY, f64::min);
    Ok((d1, d2))
}

pub const ORACLE_MAX_N: usize = 60;
pub const ORACLE_MAX_P: usize = 3;

/// Residual sum of squares of the least-squares fit on rows `start..end`.
pub fn ols_rss(data: &Dataset, start: usize, end: usize) -> f64 {
    let (x, y) = data.window(start, end);
    let a = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let b = DVector::from_iterator(y.len(), y.iter().copied());
    let beta = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .expect("SVD with both factors");
    (b - a * beta).norm_squared()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSegmentation {
    pub change_points: Vec<usize>,
    pub rss: f64,
}

fn check_oracle(data: &Dataset, min_seg: usize) -> Result<()> {
    if data.n() > ORACLE_MAX_N || data.p() > ORACLE_MAX_P {
        return Err(MosegError::TooLarge(format!(
            "n = {}, p = {} (limits {ORACLE_MAX_N}, {ORACLE_MAX_P})",
            data.n(),
            data.p()
        )));
    }
    if min_seg <= data.p() {
        return Err(MosegError::param(format!("min_seg = {min_seg} must exceed p = {}", data.p())));
    }
    Ok(())
}

/// Exact minimiser of the total per-segment least-squares RSS over all
/// placements of `q` change points with segments of at least `min_seg`
/// rows (default `p + 2`), by dynamic programming. Ties go to the
/// lexicographically smallest placement.
pub fn brute_force_segment(data: &Dataset, q: usize, min_seg: Option<usize>) -> Result<OracleSegmentation> {
    let min_seg = min_seg.unwrap_or(data.p() + 2);
    check_oracle(data, min_seg)?;
    let n = data.n();
    if (q + 1) * min_seg > n {
        return Err(MosegError::param(format!("{} segments of length >= {min_seg} do not fit in n = {n}", q + 1)));
    }
    let mut cost = vec![vec![f64::INFINITY; n + 1]; n + 1];
    for (s, row) in cost.iter_mut().enumerate() {
        for (e, c) in row.iter_mut().enumerate().skip(s + min_seg) {
            *c = ols_rss(data, s, e);
        }
    }
    // best[m][e]: minimal cost of rows 0..e split into m + 1 segments.
    let mut best = vec![vec![f64::INFINITY; n + 1]; q + 1];
    let mut arg = vec![vec![0usize; n + 1]; q + 1];
    best[0][..=n].copy_from_slice(&cost[0][..=n]);
    for m in 1..=q {
        for e in (m + 1) * min_seg..=n {
            for k in m * min_seg..=e - min_seg {
                let v = best[m - 1][k] + cost[k][e];
                if v < best[m][e] {
                    best[m][e] = v;
                    arg[m][e] = k;
                }
            }
        }
    }
    let mut cps = Vec::with_capacity(q);
    let mut e = n;
    for m in (1..=q).rev() {
        e = arg[m][e];
        cps.push(e);
    }
    cps.reverse();
    Ok(OracleSegmentation {
        change_points: cps,
        rss: best[q][n],
    })
}

/// Buckets of `q_hat - q`: `<= -3, -2, -1, 0, 1, 2, >= 3`.
pub const HISTOGRAM_LABELS: [&str; 7] = ["<=-3", "-2", "-1", "0", "1", "2", ">=3"];

fn bucket(diff: i64) -> usize {
    (diff.clamp(-3, 3) + 3) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub q: usize,
    pub q_hat: usize,
    /// `None` when the truth has no change points.
    pub hausdorff: Option<f64>,
    pub solves: usize,
    pub seconds: f64,
}

impl RunRecord {
    pub fn new(seed: u64, truth: &[usize], estimated: &[usize], n: usize) -> Self {
        Self {
            seed,
            q: truth.len(),
            q_hat: estimated.len(),
            hausdorff: (!truth.is_empty()).then(|| hausdorff_scaled(estimated, truth, n)),
            solves: 0,
            seconds: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub replications: usize,
    pub histogram: [usize; 7],
    pub hausdorff_mean: Option<f64>,
    pub hausdorff_sd: Option<f64>,
    pub runs: Vec<RunRecord>,
}

impl EvalReport {
    pub fn from_runs(method: &str, runs: Vec<RunRecord>) -> Self {
        let mut histogram = [0; 7];
        for r in &runs {
            histogram[bucket(r.q_hat as i64 - r.q as i64)] += 1;
        }
        let d: Vec<f64> = runs.iter().filter_map(|r| r.hausdorff).collect();
        let mean = (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64);
        let sd = mean.filter(|_| d.len() > 1).map(|m| {
            (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt()
        });
        Self {
            method: method.to_string(),
            replications: runs.len(),
            histogram,
            hausdorff_mean: mean,
            hausdorff_sd: sd,
            runs,
        }
    }

    /// Share of runs with `q_hat == q`.
    pub fn exact_rate(&self) -> f64 {
        self.histogram[3] as f64 / self.replications.max(1) as f64
    }

    /// Share of runs with `|q_hat - q| <= 1`.
    pub fn within_one_rate(&self) -> f64 {
        self.histogram[2..5].iter().sum::<usize>() as f64 / self.replications.max(1) as f64
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["method".to_string()];
        cols.extend(HISTOGRAM_LABELS.iter().map(|l| format!("qhat_minus_q{l}")));
        cols.extend(["D_mean".to_string(), "D_sd".to_string()]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "NA".into());
        let mut cols = vec![self.method.clone()];
        cols.extend(self.histogram.iter().map(|c| c.to_string()));
        cols.extend([opt(self.hausdorff_mean), opt(self.hausdorff_sd)]);
        cols.join(",")
    }

    pub fn write_csv<W: Write>(reports: &[EvalReport], mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::csv_header())?;
        for r in reports {
            writeln!(out, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{self, Preset};
    use ndarray::{Array1, Array2};

    #[test]
    fn hausdorff_examples() {
        assert_eq!(hausdorff_scaled(&[100, 200], &[100, 200], 300), 0.0);
        assert_eq!(hausdorff_scaled(&[], &[100, 200], 300), 1.0);
        let d = hausdorff_scaled(&[110, 190], &[100, 200], 300);
        assert!((d - 1.0 / 30.0).abs() < 1e-15);
        // Directed terms differ: every estimate is near the truth but 200 is missed.
        assert!((hausdorff_scaled(&[100], &[100, 200], 300) - 100.0 / 300.0).abs() < 1e-15);
        assert_eq!(hausdorff_scaled(&[], &[], 300), 0.0);
    }

    #[test]
    fn separation_rates_by_hand() {
        let mut c = simgen::preset(Preset::S2, None, 0).unwrap();
        c.p = 1;
        c.change_points = vec![100, 110];
        c.betas = vec![vec![0.0], vec![2.0], vec![2.5]];
        let (d1, d2) = separation_rates(&c).unwrap();
        // delta = (2, 0.5); spacings (100, 10, 190).
        assert!((d1 - 0.25 * 10.0).abs() < 1e-12);
        assert!((d2 - (4.0 * 10.0f64).min(0.25 * 10.0)).abs() < 1e-12);
        assert!(d1 <= d2);
    }

    #[test]
    fn setting4_balance() {
        let c = simgen::preset(Preset::S4, Some(1.6), 0).unwrap();
        let bounds = [0, 60, 120, 240, 360, 600, 840];
        let terms: Vec<f64> = (1..=5)
            .map(|j| {
                let d2: f64 = c.betas[j].iter().zip(&c.betas[j - 1]).map(|(a, b)| (a - b).powi(2)).sum();
                d2 * (bounds[j + 1] - bounds[j]).min(bounds[j] - bounds[j - 1]) as f64
            })
            .collect();
        assert!((terms[0] - terms[2]).abs() < 1e-9 && (terms[2] - terms[4]).abs() < 1e-9);
        assert!((terms[1] - terms[3]).abs() < 1e-9);
        assert!((terms[0] - 960.0 * 1.6 * 1.6).abs() < 1e-9);
        let (d1, d2) = separation_rates(&c).unwrap();
        assert!(d1 < d2);
    }

    #[test]
    fn separation_needs_changes() {
        let c = simgen::preset(Preset::S5, None, 0).unwrap();
        assert!(matches!(separation_rates(&c), Err(MosegError::Undefined(_))));
    }

    fn step(n: usize, theta: usize, noise: &[f64]) -> Dataset {
        let y = Array1::from_shape_fn(n, |t| if t < theta { 1.0 } else { -1.0 } + noise.get(t).copied().unwrap_or(0.0));
        Dataset::new(y, Array2::ones((n, 1))).unwrap()
    }

    #[test]
    fn oracle_recovers_noiseless_break() {
        let d = step(30, 13, &[]);
        let o = brute_force_segment(&d, 1, None).unwrap();
        assert_eq!(o.change_points, vec![13]);
        assert!(o.rss < 1e-20);
    }

    #[test]
    fn oracle_without_changes_is_full_ols() {
        let d = step(30, 13, &[]);
        let o = brute_force_segment(&d, 0, None).unwrap();
        assert!(o.change_points.is_empty());
        assert!((o.rss - ols_rss(&d, 0, 30)).abs() < 1e-12);
        // Mean of 13 ones and 17 minus-ones is -4/30.
        let m: f64 = -4.0 / 30.0;
        let by_hand = 13.0 * (1.0 - m).powi(2) + 17.0 * (-1.0 - m).powi(2);
        assert!((o.rss - by_hand).abs() < 1e-10);
    }

    fn naive(data: &Dataset, q: usize, min_seg: usize) -> (Vec<usize>, f64) {
        fn rec(data: &Dataset, start: usize, left: usize, min_seg: usize, acc: &mut Vec<usize>, best: &mut (Vec<usize>, f64)) {
            let n = data.n();
            if left == 0 {
                if n - start < min_seg {
                    return;
                }
                let mut bounds = vec![0];
                bounds.extend_from_slice(acc);
                bounds.push(n);
                let total: f64 = bounds.windows(2).map(|w| ols_rss(data, w[0], w[1])).sum();
                if total < best.1 {
                    *best = (acc.clone(), total);
                }
                return;
            }
            for k in start + min_seg..=n.saturating_sub(min_seg * left) {
                acc.push(k);
                rec(data, k, left - 1, min_seg, acc, best);
                acc.pop();
            }
        }
        let mut best = (Vec::new(), f64::INFINITY);
        rec(data, 0, q, min_seg, &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn oracle_matches_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for case in 0..12 {
            let n = rng.random_range(12..=20);
            let p = rng.random_range(1..=2);
            let q = rng.random_range(0..=2);
            let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
            let y = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let d = Dataset::new(y, x).unwrap();
            let min_seg = p + 2;
            if (q + 1) * min_seg > n {
                continue;
            }
            let dp = brute_force_segment(&d, q, None).unwrap();
            let (cps, rss) = naive(&d, q, min_seg);
            assert!((dp.rss - rss).abs() <= 1e-9 * (1.0 + rss), "case {case}");
            assert_eq!(dp.change_points, cps, "case {case}");
        }
    }

    #[test]
    fn oracle_limits() {
        let big = Dataset::new(Array1::zeros(61), Array2::ones((61, 1))).unwrap();
        assert!(matches!(brute_force_segment(&big, 1, None), Err(MosegError::TooLarge(_))));
        let wide = Dataset::new(Array1::zeros(20), Array2::ones((20, 4))).unwrap();
        assert!(matches!(brute_force_segment(&wide, 1, None), Err(MosegError::TooLarge(_))));
        let d = step(20, 10, &[]);
        assert!(brute_force_segment(&d, 1, Some(1)).is_err());
        assert!(brute_force_segment(&d, 9, None).is_err());
    }

    #[test]
    fn report_aggregation() {
        let truth = [100, 200];
        let runs = vec![
            RunRecord::new(0, &truth, &[100, 200], 300),
            RunRecord::new(1, &truth, &[110, 190], 300),
            RunRecord::new(2, &truth, &[], 300),
            RunRecord::new(3, &truth, &[50, 100, 150, 200, 250], 300),
        ];
        let r = EvalReport::from_runs("moseg", runs);
        assert_eq!(r.histogram, [0, 1, 0, 2, 0, 0, 1]);
        assert_eq!(r.histogram.iter().sum::<usize>(), r.replications);
        let ds = [0.0, 1.0 / 30.0, 1.0, 50.0 / 300.0];
        let mean = ds.iter().sum::<f64>() / 4.0;
        assert!((r.hausdorff_mean.unwrap() - mean).abs() < 1e-15);
        let sd = (ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((r.hausdorff_sd.unwrap() - sd).abs() < 1e-15);
        assert_eq!(r.exact_rate(), 0.5);
        assert_eq!(r.within_one_rate(), 0.5);

        let mut buf = Vec::new();
        EvalReport::write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), 10);
        assert!(lines.next().unwrap().starts_with("moseg,0,1,0,2,0,0,1,"));
    }

    #[test]
    fn no_change_truth_has_no_distance() {
        let r = EvalReport::from_runs("moseg", vec![RunRecord::new(0, &[], &[], 300), RunRecord::new(1, &[], &[40], 300)]);
        assert_eq!(r.hausdorff_mean, None);
        assert_eq!(r.histogram[3], 1);
        assert_eq!(r.histogram[4], 1);
    }
}
