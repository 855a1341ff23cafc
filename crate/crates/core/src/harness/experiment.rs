//! Multi-seed experiment runs and their artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::bounds::{bound_curve, d_f, BoundConstants, BoundCurve, TheoremId};
use crate::error::{Error, Result};
use crate::estimators::EstimatorMode;
use crate::fmt_f64;
use crate::harness::config::{ExperimentConfig, ScheduleRule};
use crate::harness::plot::{emit_plot, figure_series, PlotSeries, ReferenceLine};
use crate::harness::rate::{check_rate, RateReport};
use crate::optimizer::{mean_rows, project, run_sgd_with, write_trace_csv, Metric, RunOptions, RunTrace, TraceRow};
use crate::problems::{standard_normal, GraphProblem, ProblemKind};
use crate::rng::{stream, stream_rng};
use crate::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: RunTrace,
    /// `D_f` of this run's initial iterate.
    pub d_f: f64,
}

/// Pointwise comparison of the seed-mean metric with a bound.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeVerdict {
    pub theorem: TheoremId,
    pub metric: Metric,
    pub slack: f64,
    /// Largest `metric / bound` over the checked rows.
    pub worst_ratio: f64,
    pub worst_k: usize,
    pub rows_checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub problem: GraphProblem,
    pub runs: Vec<SeedRun>,
    pub mean_rows: Vec<TraceRow>,
    pub constants: BoundConstants,
    pub g_hat: f64,
    pub curves: Vec<BoundCurve>,
    pub rate: RateReport,
    pub envelopes: Vec<EnvelopeVerdict>,
    pub summary: BTreeMap<String, String>,
}

impl ExperimentOutcome {
    pub fn projection_activated(&self) -> bool {
        self.runs.iter().any(|r| r.trace.projection_activated())
    }

    pub fn all_passed(&self) -> bool {
        self.rate.passed && self.envelopes.iter().all(|e| e.passed)
    }
}

/// Initial iterate for a run: standard normal, projected into the region.
pub fn initial_iterate(problem: &GraphProblem, seed: u64) -> ParamVector {
    project(&standard_normal(problem.dim(), &mut stream_rng(seed, stream::INIT)), &problem.region())
}

/// The bound whose step-size assumption the configured schedule meets, with
/// the metric it constrains; `None` when the run does not match the
/// theorem's hypotheses or the bound holds only with high probability.
fn envelope_metric(theorem: TheoremId, config: &ExperimentConfig) -> Option<Metric> {
    let rule = config.schedule.rule;
    let unit_lk = rule == ScheduleRule::InverseLk && config.schedule.step_scale == 1.0;
    let convex = config.problem.kind == ProblemKind::Convex;
    match theorem {
        TheoremId::T2Iterate if unit_lk && convex => Some(Metric::DistSq),
        TheoremId::T2Average if unit_lk && convex => Some(Metric::AvgGap),
        TheoremId::T3Smooth if unit_lk && convex => Some(Metric::FGap),
        TheoremId::T4Convex if rule == ScheduleRule::InverseSqrt && convex => Some(Metric::AvgGap),
        TheoremId::T5Nonconvex if rule == ScheduleRule::ConstantNonconvex => Some(Metric::MinGradNormSq),
        _ => None,
    }
}

fn check_envelope(
    theorem: TheoremId,
    metric: Metric,
    curve: &BoundCurve,
    rows: &[TraceRow],
    slack: f64,
) -> EnvelopeVerdict {
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_k = 0;
    let mut checked = 0;
    for &(k, bound) in &curve.points {
        if let Some(row) = rows.get(k - 1).filter(|r| r.k == k) {
            checked += 1;
            let ratio = metric.of(row) / bound;
            if ratio > worst_ratio || ratio.is_nan() {
                worst_ratio = ratio;
                worst_k = k;
            }
        }
    }
    EnvelopeVerdict {
        theorem,
        metric,
        slack,
        worst_ratio,
        worst_k,
        rows_checked: checked,
        passed: checked > 0 && worst_ratio <= slack,
    }
}

/// Run every seed, aggregate, evaluate bounds and verdicts, and (when `out`
/// is given) write the artifacts.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let problem = GraphProblem::generate(&config.problem, config.data_seed)?;
    let curvature = problem.curvature_constants(config.data_seed)?;
    let l = curvature.l;
    let big_l = curvature.smoothness;
    let horizon = config.iterations;
    let options = RunOptions {
        iterate_stride: config.iterate_stride,
        log_draws: false,
    };

    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedRun> {
            let w1 = initial_iterate(&problem, seed);
            let run_d_f = d_f(problem.objective(&w1)?, problem.f_star(), big_l)?;
            let schedule = config.schedule.build(l, run_d_f, horizon)?;
            let region = problem.region();
            let trace = run_sgd_with(&problem, &config.estimator, &schedule, &region, horizon, &w1, seed, options)?;
            Ok(SeedRun {
                seed,
                trace,
                d_f: run_d_f,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let traces: Vec<&[TraceRow]> = runs.iter().map(|r| r.trace.rows.as_slice()).collect();
    let mean = mean_rows(&traces)?;
    let g_hat = runs.iter().map(|r| r.trace.g_hat()).fold(0.0, f64::max);
    let d_f_max = runs.iter().map(|r| r.d_f).fold(0.0, f64::max);
    let constants = BoundConstants {
        g: Some(g_hat),
        l: l.filter(|l| *l > 0.0),
        big_l: Some(big_l),
        d: problem.region().diameter(),
        c: Some(config.schedule.c),
        d_f: Some(config.schedule.d_f.unwrap_or(d_f_max)),
        rho: Some(config.schedule.rho),
        delta: Some(config.schedule.delta),
        horizon: Some(horizon),
    };

    let mut curves = Vec::new();
    let mut envelopes = Vec::new();
    for &theorem in &config.theorems {
        let curve = bound_curve(theorem, &constants, horizon)
            .map_err(|e| Error::config("theorems", format!("{theorem}: {e}")))?;
        if let Some(metric) = envelope_metric(theorem, config) {
            envelopes.push(check_envelope(theorem, metric, &curve, &mean, config.envelope_slack));
        }
        curves.push(curve);
    }
    let rate = check_rate(&mean, config.metric, config.target_slope, config.window)?;

    let mut outcome = ExperimentOutcome {
        problem,
        runs,
        mean_rows: mean,
        constants,
        g_hat,
        curves,
        rate,
        envelopes,
        summary: BTreeMap::new(),
    };
    outcome.summary = summarize(config, &outcome, l);
    if let Some(dir) = out {
        write_artifacts(config, &outcome, dir)?;
    }
    Ok(outcome)
}

fn summarize(config: &ExperimentConfig, o: &ExperimentOutcome, l: Option<f64>) -> BTreeMap<String, String> {
    let mut s = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        s.insert(k.to_string(), v);
    };
    let p = &config.problem;
    put("problem.kind", p.kind.to_string());
    put("problem.n", p.n.to_string());
    put("problem.p", fmt_f64(p.p));
    put("problem.d", p.d.to_string());
    if p.kind == ProblemKind::Nonconvex {
        put("problem.d2", p.d2.to_string());
    }
    put("problem.radius", fmt_f64(o.problem.radius()));
    put("data_seed", config.data_seed.to_string());
    put(
        "seeds",
        config.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
    );
    put("iterations", config.iterations.to_string());

    let e = &config.estimator;
    put("estimator.mode", e.mode.to_string());
    if e.mode != EstimatorMode::Exact {
        let sizes = e.sample_sizes(p.kind);
        put(
            "estimator.sample_sizes",
            sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        put("estimator.replacement", e.replacement.to_string());
    }

    let sc = &config.schedule;
    put("schedule.rule", sc.rule.name().to_string());
    match sc.rule {
        ScheduleRule::InverseLk => put("schedule.step_scale", fmt_f64(sc.step_scale)),
        ScheduleRule::Constant => put("schedule.gamma", fmt_f64(sc.gamma)),
        _ => {}
    }
    if let Some(g) = sc.g {
        put("schedule.g", fmt_f64(g));
    }
    if let Some(l) = sc.l {
        put("schedule.l", fmt_f64(l));
    }

    match l {
        Some(l) => put("measured.l", fmt_f64(l)),
        None => put("measured.l", "absent".to_string()),
    }
    put("measured.L", fmt_f64(o.constants.big_l.unwrap_or(f64::NAN)));
    put("measured.G_hat", fmt_f64(o.g_hat));
    for run in &o.runs {
        put(&format!("measured.D_f.seed{}", run.seed), fmt_f64(run.d_f));
    }
    for (name, v) in o.constants.entries() {
        put(&format!("bound_constants.{name}"), fmt_f64(v));
    }
    for curve in &o.curves {
        put(
            &format!("bound.{}.uses", curve.theorem),
            curve.theorem.required_constants().join(","),
        );
        if let Some(&(k, v)) = curve.points.last() {
            put(&format!("bound.{}.value_at_{k}", curve.theorem), fmt_f64(v));
        }
    }

    let r = &o.rate;
    put("rate.metric", r.metric.to_string());
    put("rate.window", format!("{},{}", r.k_lo, r.k_hi));
    put("rate.slope", fmt_f64(r.slope));
    put("rate.intercept", fmt_f64(r.intercept));
    put("rate.r_squared", fmt_f64(r.r_squared));
    put("rate.target_slope", fmt_f64(r.target_slope));
    put("rate.points_used", r.used.to_string());
    put("rate.points_excluded", r.excluded.to_string());
    put(
        "rate.floor_cutoff",
        r.floor_cutoff.map_or("none".to_string(), |k| k.to_string()),
    );
    put("verdict.rate", r.verdict().to_string());
    for env in &o.envelopes {
        let t = env.theorem;
        put(&format!("envelope.{t}.metric"), env.metric.to_string());
        put(&format!("envelope.{t}.slack"), fmt_f64(env.slack));
        put(&format!("envelope.{t}.worst_ratio"), fmt_f64(env.worst_ratio));
        put(&format!("envelope.{t}.worst_k"), env.worst_k.to_string());
        put(
            &format!("verdict.envelope.{t}"),
            if env.passed { "pass" } else { "fail" }.to_string(),
        );
    }
    let activated: Vec<String> = o
        .runs
        .iter()
        .filter(|r| r.trace.projection_activated())
        .map(|r| r.seed.to_string())
        .collect();
    put("projection.activated", (!activated.is_empty()).to_string());
    put(
        "projection.activated_seeds",
        if activated.is_empty() { "none".to_string() } else { activated.join(",") },
    );
    put(
        "verdict.overall",
        if o.all_passed() { "pass" } else { "fail" }.to_string(),
    );
    s
}

fn write_artifacts(config: &ExperimentConfig, o: &ExperimentOutcome, dir: &Path) -> Result<()> {
    for run in &o.runs {
        write_trace_csv(&dir.join(format!("trace_seed{}.csv", run.seed)), &run.trace.rows)?;
    }
    write_trace_csv(&dir.join("mean_trace.csv"), &o.mean_rows)?;
    for curve in &o.curves {
        curve.write_csv(&dir.join(format!("bound_{}.csv", curve.theorem)))?;
    }
    let mut summary = fs::File::create(dir.join("summary.txt"))?;
    for (k, v) in &o.summary {
        writeln!(summary, "{k}={v}")?;
    }
    summary.flush()?;

    let mut series = figure_series(&o.mean_rows);
    series.extend(o.curves.iter().map(PlotSeries::from_bound));
    let slope = if config.problem.kind == ProblemKind::Convex { -1.0 } else { -0.5 };
    let c0 = config.metric.of(&o.mean_rows[0]);
    let reference = (c0 > 0.0 && c0.is_finite()).then_some(ReferenceLine { c0, slope });
    let title = format!(
        "{} problem, {} estimator, {} seeds",
        config.problem.kind,
        config.estimator.mode,
        config.seeds.len()
    );
    emit_plot(&series, reference.as_ref(), &title, &dir.join("plot.svg"))
}
