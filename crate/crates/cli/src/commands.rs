// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use moseg::metrics::{EvalReport, RunRecord};
use moseg::multiscale::{self, DEFAULT_ALPHA_MULTISCALE};
use moseg::pipeline::{self, DEFAULT_ALPHA_SINGLE};
use moseg::simgen::{self, Preset};
use moseg::tuning::{self, BandwidthMode, BandwidthRule, CvSettings, DEFAULT_PRACTICAL_TERMS};
use moseg::{io as dataio, mosum};
use moseg::{Dataset, DetectorSeries, FitOptions, MosegParams, MultiscaleParams, SegmentationResult};

use crate::cli::{BandwidthArgs, BenchmarkArgs, CvGridArgs, Format, InputArgs, MethodArg, RuleArg, SegmentArgs, SimulateArgs, TuningArgs};
use crate::CliError;

type CliResult<T> = Result<T, CliError>;

fn load(input: &InputArgs) -> CliResult<Dataset> {
    let data = dataio::read_dataset_path(&input.input, !input.no_header)?;
    Ok(if input.scale_columns { data.scale_columns() } else { data })
}

fn sink(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut out: Box<dyn Write>) -> CliResult<()> {
    out.flush().map_err(|e| CliError::Data(e.to_string()))
}

fn check_bandwidth(n: usize, g: usize) -> CliResult<()> {
    if g == 0 || 2 * g >= n {
        return Err(CliError::Config(format!("bandwidth G = {g} must satisfy 1 <= G < n/2 = {}", n as f64 / 2.0)));
    }
    Ok(())
}

/// Bandwidth set from explicit values or a rule; the practical rule with the
/// recommended finest bandwidth is the default.
fn resolve_bandwidths(args: &BandwidthArgs, n: usize, p: usize) -> CliResult<Vec<usize>> {
    let mut gs = match &args.bandwidths {
        Some(v) => v.clone(),
        None => {
            let mode = match args.bandwidth_rule.unwrap_or(RuleArg::Practical) {
                RuleArg::Practical => BandwidthMode::Practical,
                RuleArg::Fibonacci => BandwidthMode::Fibonacci,
            };
            let g1 = args.g1.unwrap_or_else(|| tuning::recommend_bandwidth(n, p));
            let h_cap = match mode {
                BandwidthMode::Practical => Some(args.terms.unwrap_or(DEFAULT_PRACTICAL_TERMS)),
                BandwidthMode::Fibonacci => None,
            };
            tuning::generate_bandwidths(&BandwidthRule { mode, g1, n, h_cap })?
        }
    };
    gs.sort_unstable();
    gs.dedup();
    if gs.is_empty() {
        return Err(CliError::Config("no bandwidths given".into()));
    }
    for &g in &gs {
        check_bandwidth(n, g)?;
    }
    Ok(gs)
}

fn check_tuning(t: &TuningArgs, g_min: usize) -> CliResult<()> {
    if let Some(r) = t.resolution {
        if !(r.is_finite() && r * g_min as f64 >= 1.0 - 1e-9 && r < 1.0) {
            return Err(CliError::Config(format!("resolution r = {r} must lie in [1/{g_min}, 1)")));
        }
    }
    if let Some(a) = t.alpha {
        if !(a > 0.0 && a <= 1.0) {
            return Err(CliError::Config(format!("alpha = {a} must lie in (0, 1]")));
        }
    }
    if !t.cv && t.lambda.is_none() {
        return Err(CliError::Config("choose either --lambda with --threshold, or --cv".into()));
    }
    Ok(())
}

fn fit_options(t: &TuningArgs) -> FitOptions {
    FitOptions {
        standardize: t.standardize,
        intercept: t.intercept,
    }
}

fn default_alpha(t: &TuningArgs, bandwidths: &[usize]) -> f64 {
    t.alpha.unwrap_or(if bandwidths.len() == 1 {
        DEFAULT_ALPHA_SINGLE
    } else {
        DEFAULT_ALPHA_MULTISCALE
    })
}

/// Runs the method implied by the bandwidth count and tuning mode. The
/// second value holds `(bandwidth, penalty)` pairs at which the detector is
/// reported.
fn run(data: &Dataset, gs: &[usize], t: &TuningArgs) -> CliResult<(SegmentationResult, Vec<(usize, f64)>)> {
    let alpha = default_alpha(t, gs);
    let options = fit_options(t);
    if t.cv {
        if gs.len() == 1 {
            let settings = CvSettings {
                bandwidth: gs[0],
                resolution: t.resolution,
                alpha,
                lambda_grid: t.lambda_grid.clone(),
                options,
            };
            let (res, report) = tuning::run_moseg_cv(data, &settings)?;
            Ok((res, vec![(gs[0], report.chosen_lambda)]))
        } else {
            let (res, reports) = tuning::run_moseg_ms_cv(data, gs, t.resolution, alpha, t.lambda_grid.clone(), options)?;
            let at = reports.iter().map(|r| (r.bandwidth, r.chosen_lambda)).collect();
            Ok((res, at))
        }
    } else {
        let lambda = t.lambda.expect("checked");
        let threshold = t.threshold.expect("required with --lambda");
        let res = if gs.len() == 1 {
            let mut params = MosegParams::new(gs[0], lambda, threshold).with_alpha(alpha);
            params.resolution = t.resolution;
            params.options = options;
            pipeline::run_moseg(data, &params)?
        } else {
            let mut params = MultiscaleParams::new(gs.to_vec(), lambda, threshold).with_alpha(alpha);
            params.resolution = t.resolution;
            params.options = options;
            multiscale::run_moseg_ms(data, &params)?
        };
        Ok((res, gs.iter().map(|&g| (g, lambda)).collect()))
    }
}

fn write_detector(data: &Dataset, at: &[(usize, f64)], t: &TuningArgs, path: &Path) -> CliResult<()> {
    let mut out = sink(Some(path))?;
    writeln!(out, "k,T_k,bandwidth").map_err(|e| CliError::Data(e.to_string()))?;
    for &(g, lambda) in at {
        let grid = mosum::build_grid(data.n(), g, t.resolution.unwrap_or(1.0 / g as f64))?;
        let series: DetectorSeries = mosum::compute_detector_with(data, &grid, lambda, fit_options(t), false)?;
        for (k, v) in series.points().iter().zip(&series.values) {
            writeln!(out, "{k},{v:.16e},{g}").map_err(|e| CliError::Data(e.to_string()))?;
        }
    }
    finish(out)
}

fn write_result(res: &SegmentationResult, format: Format, out: &mut dyn Write) -> io::Result<()> {
    match format {
        Format::Json => writeln!(out, "{}", res.to_json().map_err(io::Error::other)?),
        Format::Csv => {
            writeln!(out, "change_point,anchor,anchor_bandwidth,G_min,G_max,G_star")?;
            for c in &res.clusters {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.refined, c.anchor.location, c.anchor.bandwidth, c.g_min, c.g_max, c.g_star
                )?;
            }
            Ok(())
        }
    }
}

pub fn segment(args: &SegmentArgs) -> CliResult<()> {
    let data = load(&args.input)?;
    let gs = resolve_bandwidths(&args.bandwidths, data.n(), data.p())?;
    check_tuning(&args.tuning, gs[0])?;
    let (res, at) = run(&data, &gs, &args.tuning)?;
    for w in &res.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(path) = &args.emit_detector {
        write_detector(&data, &at, &args.tuning, path)?;
    }
    let mut out = sink(args.output.as_deref())?;
    write_result(&res, args.format, &mut out).map_err(|e| CliError::Data(e.to_string()))?;
    finish(out)
}

fn parse_preset(name: &str) -> CliResult<Preset> {
    name.parse::<Preset>().map_err(|e| CliError::Config(e.to_string()))
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let preset = parse_preset(&args.preset)?;
    let config = simgen::preset(preset, args.knob, args.seed)?;
    let data = simgen::generate(&config)?;
    dataio::write_dataset_path(&data, &args.output)?;
    if let Some(path) = &args.truth {
        let mut out = sink(Some(path))?;
        writeln!(out, "{}", serde_json::to_string_pretty(&config).map_err(|e| CliError::Data(e.to_string()))?)
            .map_err(|e| CliError::Data(e.to_string()))?;
        finish(out)?;
    }
    Ok(())
}

struct TimedRun {
    method: &'static str,
    knob: f64,
    record: RunRecord,
    result: SegmentationResult,
}

pub fn benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    let preset = parse_preset(&args.preset)?;
    let knobs = args.knob.clone().unwrap_or_else(|| vec![preset.default_knob()]);
    let mut tables: Vec<(f64, EvalReport)> = Vec::new();
    let mut runs: Vec<TimedRun> = Vec::new();
    for &knob in &knobs {
        let mut per_method: Vec<(&'static str, Vec<RunRecord>)> = Vec::new();
        for rep in 0..args.reps {
            let seed = args.seed + rep;
            let config = simgen::preset(preset, Some(knob), seed)?;
            let data = simgen::generate(&config)?;
            let ms = resolve_bandwidths(&args.bandwidths, data.n(), data.p())?;
            let single = vec![args.bandwidth.unwrap_or(ms[0])];
            check_bandwidth(data.n(), single[0])?;
            for method in &args.methods {
                let (label, gs) = match method {
                    MethodArg::Moseg => ("moseg", &single),
                    MethodArg::Ms => ("moseg.ms", &ms),
                };
                check_tuning(&args.tuning, gs[0])?;
                let clock = Instant::now();
                let (res, _) = run(&data, gs, &args.tuning)?;
                let seconds = clock.elapsed().as_secs_f64();
                let mut record = RunRecord::new(seed, &config.change_points, &res.change_points, config.n);
                let s = res.solves;
                record.solves = s.stage1 + s.refinement + s.segments + s.cross_validation;
                record.seconds = seconds;
                match per_method.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, v)) => v.push(record.clone()),
                    None => per_method.push((label, vec![record.clone()])),
                }
                runs.push(TimedRun {
                    method: label,
                    knob,
                    record,
                    result: res,
                });
            }
        }
        for (label, records) in per_method {
            tables.push((knob, EvalReport::from_runs(label, records)));
        }
    }

    let io_err = |e: io::Error| CliError::Data(e.to_string());
    let mut out = sink(args.output.as_deref())?;
    writeln!(out, "preset,knob,{},mean_seconds,mean_solves", EvalReport::csv_header()).map_err(io_err)?;
    for (knob, report) in &tables {
        let reps = report.runs.len().max(1) as f64;
        let secs = report.runs.iter().map(|r| r.seconds).sum::<f64>() / reps;
        let solves = report.runs.iter().map(|r| r.solves as f64).sum::<f64>() / reps;
        writeln!(out, "{},{knob},{},{secs:.4},{solves:.1}", preset.name(), report.csv_row()).map_err(io_err)?;
    }
    finish(out)?;

    if let Some(path) = &args.runs {
        let mut out = sink(Some(path))?;
        writeln!(
            out,
            "preset,knob,method,seed,q,q_hat,hausdorff,stage1_s,refinement_s,cv_s,segments_s,total_s,\
             stage1_solves,refinement_solves,cv_solves,segment_solves"
        )
        .map_err(io_err)?;
        for r in &runs {
            let t = r.result.timings;
            let s = r.result.solves;
            let h = r.record.hausdorff.map(|h| format!("{h:.6}")).unwrap_or_else(|| "NA".into());
            writeln!(
                out,
                "{},{},{},{},{},{},{h},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
                preset.name(),
                r.knob,
                r.method,
                r.record.seed,
                r.record.q,
                r.record.q_hat,
                t.stage1,
                t.refinement,
                t.cross_validation,
                t.segments,
                r.record.seconds,
                s.stage1,
                s.refinement,
                s.cross_validation,
                s.segments
            )
            .map_err(io_err)?;
        }
        finish(out)?;
    }
    Ok(())
}

pub fn cv_grid(args: &CvGridArgs) -> CliResult<()> {
    let data = load(&args.input)?;
    let g = args.bandwidth.unwrap_or_else(|| tuning::recommend_bandwidth(data.n(), data.p()));
    check_bandwidth(data.n(), g)?;
    let settings = CvSettings {
        bandwidth: g,
        resolution: args.resolution,
        alpha: args.alpha,
        lambda_grid: args.lambda_grid.clone(),
        options: FitOptions::default(),
    };
    let report = tuning::cross_validate(&data, &settings)?;
    eprintln!(
        "bandwidth {g}: chosen lambda {:.6e} with m = {} change point(s) {:?}",
        report.chosen_lambda, report.chosen_m, report.selected
    );
    let mut out = sink(args.output.as_deref())?;
    report.write_csv(&mut out).map_err(|e| CliError::Data(e.to_string()))?;
    finish(out)
}
