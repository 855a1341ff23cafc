//! Projected SGD: `w_{k+1} = Π_S(w_k − γ_k g_k)`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimators::{EstimatorMode, EstimatorSpec};
use crate::problems::GraphProblem;
use crate::rng::{derive_seed, stream};
use crate::{fmt_f64, ParamVector};

/// Step-size rule with its constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `γ_k = 1 / (scale · l · k)`; `scale = 1` is the textbook rule, the
    /// consistent-estimator convex experiment uses `scale = 20`.
    InverseLk { l: f64, scale: f64 },
    /// `γ_k = c / √k`.
    InverseSqrt { c: f64 },
    /// `γ_k = D_f / (G √T)`.
    ConstantNonconvex { d_f: f64, g: f64, horizon: usize },
    /// `γ_k = 1 / ((l − ρ/T) k)`.
    HighProbInverseLk { l: f64, rho: f64, horizon: usize },
    /// `γ_k = D_f / ((1 + δ) G √T)`.
    HighProbConstantNonconvex {
        d_f: f64,
        g: f64,
        horizon: usize,
        delta: f64,
    },
    /// Fixed `γ_k = γ`, as used by the nonconvex experiment.
    Constant { gamma: f64 },
}

impl StepSchedule {
    pub fn rule_name(&self) -> &'static str {
        match self {
            StepSchedule::InverseLk { .. } => "inverse_lk",
            StepSchedule::InverseSqrt { .. } => "inverse_sqrt",
            StepSchedule::ConstantNonconvex { .. } => "constant_nonconvex",
            StepSchedule::HighProbInverseLk { .. } => "highprob_inverse_lk",
            StepSchedule::HighProbConstantNonconvex { .. } => "highprob_constant_nonconvex",
            StepSchedule::Constant { .. } => "constant",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        let horizon_ok = |t: usize| {
            if t >= 1 {
                Ok(())
            } else {
                Err(Error::invalid("T", "horizon must be at least 1"))
            }
        };
        match *self {
            StepSchedule::InverseLk { l, scale } => {
                positive("l", l)?;
                positive("scale", scale)
            }
            StepSchedule::InverseSqrt { c } => positive("c", c),
            StepSchedule::ConstantNonconvex { d_f, g, horizon } => {
                positive("D_f", d_f)?;
                positive("G", g)?;
                horizon_ok(horizon)
            }
            StepSchedule::HighProbInverseLk { l, rho, horizon } => {
                positive("l", l)?;
                horizon_ok(horizon)?;
                if !(rho >= 0.0) {
                    return Err(Error::invalid("rho", "must be nonnegative"));
                }
                if !(l - rho / horizon as f64 > 0.0) {
                    return Err(Error::invalid("rho", "need l − ρ/T > 0"));
                }
                Ok(())
            }
            StepSchedule::HighProbConstantNonconvex {
                d_f,
                g,
                horizon,
                delta,
            } => {
                positive("D_f", d_f)?;
                positive("G", g)?;
                horizon_ok(horizon)?;
                if !(0.0..1.0).contains(&delta) {
                    return Err(Error::invalid("delta", format!("{delta} outside [0, 1)")));
                }
                Ok(())
            }
            StepSchedule::Constant { gamma } => positive("gamma", gamma),
        }
    }

    /// `γ_k` for `k ≥ 1`.
    pub fn step_size(&self, k: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::invalid("k", "iterations start at 1"));
        }
        self.validate()?;
        let kf = k as f64;
        Ok(match *self {
            StepSchedule::InverseLk { l, scale } => 1.0 / (scale * l * kf),
            StepSchedule::InverseSqrt { c } => c / kf.sqrt(),
            StepSchedule::ConstantNonconvex { d_f, g, horizon } => {
                d_f / (g * (horizon as f64).sqrt())
            }
            StepSchedule::HighProbInverseLk { l, rho, horizon } => {
                1.0 / ((l - rho / horizon as f64) * kf)
            }
            StepSchedule::HighProbConstantNonconvex {
                d_f,
                g,
                horizon,
                delta,
            } => d_f / ((1.0 + delta) * g * (horizon as f64).sqrt()),
            StepSchedule::Constant { gamma } => gamma,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeasibleRegion {
    Ball { radius: f64 },
    Unconstrained,
}

impl FeasibleRegion {
    /// Diameter, `None` when unbounded.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            FeasibleRegion::Ball { radius } => Some(2.0 * radius),
            FeasibleRegion::Unconstrained => None,
        }
    }

    pub fn contains(&self, w: &ParamVector) -> bool {
        match self {
            FeasibleRegion::Ball { radius } => w.norm() <= *radius,
            FeasibleRegion::Unconstrained => true,
        }
    }
}

/// Euclidean projection onto the region.
pub fn project(w: &ParamVector, region: &FeasibleRegion) -> ParamVector {
    project_flagged(w, region).0
}

/// Projection plus whether it moved the point.
pub fn project_flagged(w: &ParamVector, region: &FeasibleRegion) -> (ParamVector, bool) {
    match *region {
        FeasibleRegion::Ball { radius } => {
            let norm = w.norm();
            if norm <= radius {
                (w.clone(), false)
            } else {
                (w * (radius / norm), true)
            }
        }
        FeasibleRegion::Unconstrained => (w.clone(), false),
    }
}

/// Source of the search direction `g_k`.
pub trait GradientOracle: Sync {
    fn draw(&self, problem: &GraphProblem, w: &ParamVector, seed: u64) -> Result<ParamVector>;

    /// True when `draw` always returns the exact gradient, letting the loop
    /// reuse the metric gradient.
    fn is_exact(&self) -> bool {
        false
    }
}

impl GradientOracle for EstimatorSpec {
    fn draw(&self, problem: &GraphProblem, w: &ParamVector, seed: u64) -> Result<ParamVector> {
        Ok(crate::estimators::estimate_gradient(self, problem, w, seed)?.g)
    }

    fn is_exact(&self) -> bool {
        self.mode == EstimatorMode::Exact
    }
}

/// One row of a run trace; metrics are evaluated at `w_k` before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub gamma_k: f64,
    pub dist_sq: f64,
    pub f_gap: f64,
    pub avg_gap: f64,
    pub grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    /// The update from `w_k` to `w_{k+1}` was projected.
    pub proj_active: bool,
}

pub const TRACE_HEADER: &str =
    "k,gamma_k,dist_sq,f_gap,avg_gap,grad_norm_sq,min_grad_norm_sq,proj_active";

/// A logged estimator draw, for checking per-step inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawRecord {
    pub k: usize,
    pub gamma: f64,
    pub w: ParamVector,
    pub g: ParamVector,
    /// Exact gradient at `w`.
    pub h: ParamVector,
    pub w_next: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Stored iterates `(k, w_k)`: always `k = 1` and `k = T`, plus every
    /// `iterate_stride`-th iterate when requested.
    pub iterates: Vec<(usize, ParamVector)>,
    pub final_iterate: ParamVector,
    pub final_average: ParamVector,
    /// Largest `‖g_k‖` drawn.
    pub max_estimate_norm: f64,
    /// Largest `‖∇f(w_k)‖` seen.
    pub max_grad_norm: f64,
    pub draws: Vec<DrawRecord>,
}

impl RunTrace {
    /// `Ĝ = max_k max(‖g_k‖, ‖∇f(w_k)‖)`.
    pub fn g_hat(&self) -> f64 {
        self.max_estimate_norm.max(self.max_grad_norm)
    }

    pub fn projection_activated(&self) -> bool {
        self.rows.iter().any(|r| r.proj_active)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_trace_csv(path, &self.rows)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Store every `stride`-th iterate in addition to the first and last.
    pub iterate_stride: Option<usize>,
    /// Keep a [`DrawRecord`] per iteration.
    pub log_draws: bool,
}

pub fn run_sgd<O: GradientOracle + ?Sized>(
    problem: &GraphProblem,
    oracle: &O,
    schedule: &StepSchedule,
    region: &FeasibleRegion,
    iterations: usize,
    w1: &ParamVector,
    seed: u64,
) -> Result<RunTrace> {
    run_sgd_with(
        problem,
        oracle,
        schedule,
        region,
        iterations,
        w1,
        seed,
        RunOptions::default(),
    )
}

/// The draw at iteration `k` uses seed `derive_seed(seed ^ ESTIMATOR, k)`.
#[allow(clippy::too_many_arguments)]
pub fn run_sgd_with<O: GradientOracle + ?Sized>(
    problem: &GraphProblem,
    oracle: &O,
    schedule: &StepSchedule,
    region: &FeasibleRegion,
    iterations: usize,
    w1: &ParamVector,
    seed: u64,
    options: RunOptions,
) -> Result<RunTrace> {
    if iterations == 0 {
        return Err(Error::invalid("T", "need at least one iteration"));
    }
    problem.check_dim(w1)?;
    schedule.validate()?;
    if !region.contains(w1) {
        return Err(Error::invalid("w1", "initial iterate lies outside the feasible region"));
    }
    let f_star = problem.f_star();
    let w_star = problem.w_star();
    let draw_root = derive_seed(seed, stream::ESTIMATOR);

    let mut w = w1.clone();
    let mut avg = w1.clone();
    let mut rows = Vec::with_capacity(iterations);
    let mut iterates = vec![(1, w1.clone())];
    let mut draws = Vec::new();
    let mut min_grad = f64::INFINITY;
    let mut max_estimate_norm: f64 = 0.0;
    let mut max_grad_norm: f64 = 0.0;

    for k in 1..=iterations {
        let h = problem.gradient(&w)?;
        let grad_norm_sq = h.norm_squared();
        min_grad = min_grad.min(grad_norm_sq);
        max_grad_norm = max_grad_norm.max(grad_norm_sq.sqrt());
        let f_gap = problem.objective(&w)? - f_star;
        let avg_gap = problem.objective(&avg)? - f_star;
        let dist_sq = (&w - w_star).norm_squared();

        let g = if oracle.is_exact() {
            h.clone()
        } else {
            oracle.draw(problem, &w, derive_seed(draw_root, k as u64))?
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { k });
        }
        max_estimate_norm = max_estimate_norm.max(g.norm());

        let gamma = schedule.step_size(k)?;
        let (next, proj_active) = project_flagged(&(&w - &g * gamma), region);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIterate { k: k + 1 });
        }

        rows.push(TraceRow {
            k,
            gamma_k: gamma,
            dist_sq,
            f_gap,
            avg_gap,
            grad_norm_sq,
            min_grad_norm_sq: min_grad,
            proj_active,
        });
        if options.log_draws {
            draws.push(DrawRecord {
                k,
                gamma,
                w: w.clone(),
                g,
                h,
                w_next: next.clone(),
            });
        }
        if k == iterations {
            break;
        }

        w = next;
        let k1 = (k + 1) as f64;
        avg = (&avg * k as f64 + &w) / k1;
        if let Some(stride) = options.iterate_stride.filter(|s| *s > 0) {
            if (k + 1) % stride == 0 && k + 1 != iterations {
                iterates.push((k + 1, w.clone()));
            }
        }
    }
    if iterations > 1 {
        iterates.push((iterations, w.clone()));
    }

    Ok(RunTrace {
        rows,
        iterates,
        final_iterate: w,
        final_average: avg,
        max_estimate_norm,
        max_grad_norm,
        draws,
    })
}

/// Column of a trace that rate checks and plots can select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    DistSq,
    FGap,
    AvgGap,
    GradNormSq,
    MinGradNormSq,
}

impl Metric {
    pub const FIGURE: [Metric; 4] = [
        Metric::DistSq,
        Metric::AvgGap,
        Metric::FGap,
        Metric::MinGradNormSq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::DistSq => "dist_sq",
            Metric::FGap => "f_gap",
            Metric::AvgGap => "avg_gap",
            Metric::GradNormSq => "grad_norm_sq",
            Metric::MinGradNormSq => "min_grad_norm_sq",
        }
    }

    pub fn of(self, row: &TraceRow) -> f64 {
        match self {
            Metric::DistSq => row.dist_sq,
            Metric::FGap => row.f_gap,
            Metric::AvgGap => row.avg_gap,
            Metric::GradNormSq => row.grad_norm_sq,
            Metric::MinGradNormSq => row.min_grad_norm_sq,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Metric::DistSq,
            Metric::FGap,
            Metric::AvgGap,
            Metric::GradNormSq,
            Metric::MinGradNormSq,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::invalid("metric", format!("unknown metric `{s}`")))
    }
}

/// Pointwise mean of several traces with identical `k` grids;
/// `proj_active` is true if any run projected.
pub fn mean_rows(traces: &[&[TraceRow]]) -> Result<Vec<TraceRow>> {
    let first = traces.first().ok_or(Error::EmptyPlot("no traces to average"))?;
    let m = traces.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for (i, row) in first.iter().enumerate() {
        let mut acc = TraceRow {
            proj_active: false,
            dist_sq: 0.0,
            f_gap: 0.0,
            avg_gap: 0.0,
            grad_norm_sq: 0.0,
            min_grad_norm_sq: 0.0,
            ..*row
        };
        for t in traces {
            let r = t.get(i).filter(|r| r.k == row.k).ok_or_else(|| {
                Error::Parse(format!("traces disagree at row {i}"))
            })?;
            acc.dist_sq += r.dist_sq;
            acc.f_gap += r.f_gap;
            acc.avg_gap += r.avg_gap;
            acc.grad_norm_sq += r.grad_norm_sq;
            acc.min_grad_norm_sq += r.min_grad_norm_sq;
            acc.proj_active |= r.proj_active;
        }
        acc.dist_sq /= m;
        acc.f_gap /= m;
        acc.avg_gap /= m;
        acc.grad_norm_sq /= m;
        acc.min_grad_norm_sq /= m;
        out.push(acc);
    }
    Ok(out)
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            fmt_f64(r.gamma_k),
            fmt_f64(r.dist_sq),
            fmt_f64(r.f_gap),
            fmt_f64(r.avg_gap),
            fmt_f64(r.grad_norm_sq),
            fmt_f64(r.min_grad_norm_sq),
            u8::from(r.proj_active)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != TRACE_HEADER {
        return Err(Error::Parse(format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("line {}: expected 8 fields", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad number `{s}`", i + 2)))
        };
        rows.push(TraceRow {
            k: f[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad k", i + 2)))?,
            gamma_k: num(f[1])?,
            dist_sq: num(f[2])?,
            f_gap: num(f[3])?,
            avg_gap: num(f[4])?,
            grad_norm_sq: num(f[5])?,
            min_grad_norm_sq: num(f[6])?,
            proj_active: f[7].trim() == "1",
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{standard_normal, ProblemKind, ProblemParams};
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    struct ZeroOracle;

    impl GradientOracle for ZeroOracle {
        fn draw(&self, problem: &GraphProblem, _: &ParamVector, _: u64) -> Result<ParamVector> {
            Ok(ParamVector::zeros(problem.dim()))
        }
    }

    struct NanOracle;

    impl GradientOracle for NanOracle {
        fn draw(&self, problem: &GraphProblem, _: &ParamVector, _: u64) -> Result<ParamVector> {
            Ok(ParamVector::from_element(problem.dim(), f64::INFINITY))
        }
    }

    fn convex() -> GraphProblem {
        GraphProblem::generate(&ProblemParams::standard(ProblemKind::Convex), 0).unwrap()
    }

    fn init(p: &GraphProblem, seed: u64) -> ParamVector {
        project(&standard_normal(p.dim(), &mut stream_rng(seed, stream::INIT)), &p.region())
    }

    #[test]
    fn step_size_rules() {
        let s = StepSchedule::InverseLk { l: 0.5, scale: 1.0 };
        assert_eq!(s.step_size(4).unwrap(), 0.5);
        assert_eq!(StepSchedule::InverseSqrt { c: 2.0 }.step_size(4).unwrap(), 1.0);
        let c = StepSchedule::ConstantNonconvex {
            d_f: 3.0,
            g: 2.0,
            horizon: 9,
        };
        assert_eq!(c.step_size(1).unwrap(), 0.5);
        let hp = StepSchedule::HighProbConstantNonconvex {
            d_f: 3.0,
            g: 2.0,
            horizon: 9,
            delta: 0.5,
        };
        assert_eq!(hp.step_size(7).unwrap(), 1.0 / 3.0);
        assert_eq!(StepSchedule::Constant { gamma: 0.01 }.step_size(5).unwrap(), 0.01);
        let twenty = StepSchedule::InverseLk { l: 0.5, scale: 20.0 };
        assert_eq!(twenty.step_size(1).unwrap(), 0.1);
    }

    #[test]
    fn highprob_reduces_to_inverse_lk() {
        for l in [1e-4, 0.37, 2.0] {
            let a = StepSchedule::InverseLk { l, scale: 1.0 };
            let b = StepSchedule::HighProbInverseLk {
                l,
                rho: 0.0,
                horizon: 3000,
            };
            for k in 1..200 {
                assert_eq!(a.step_size(k).unwrap().to_bits(), b.step_size(k).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        let bad = StepSchedule::HighProbInverseLk {
            l: 1.0,
            rho: 10.0,
            horizon: 10,
        };
        assert!(bad.step_size(1).is_err());
        assert!(StepSchedule::InverseLk { l: 0.0, scale: 1.0 }.step_size(1).is_err());
        assert!(StepSchedule::InverseSqrt { c: 1.0 }.step_size(0).is_err());
        let d = StepSchedule::HighProbConstantNonconvex {
            d_f: 1.0,
            g: 1.0,
            horizon: 4,
            delta: 1.0,
        };
        assert!(d.step_size(1).is_err());
    }

    #[test]
    fn projection_examples() {
        let region = FeasibleRegion::Ball { radius: 2.0 };
        let inside = ParamVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(project(&inside, &region), inside);
        let far = ParamVector::from_vec(vec![4.0, 0.0]);
        assert_eq!(project(&far, &region), &far / 2.0);
        assert_eq!(project(&far, &FeasibleRegion::Unconstrained), far);
        assert_eq!(region.diameter(), Some(4.0));
    }

    proptest! {
        #[test]
        fn projection_is_nonexpanding(
            w in prop::collection::vec(-50.0f64..50.0, 5),
            u in prop::collection::vec(-50.0f64..50.0, 5),
            radius in 0.1f64..40.0,
        ) {
            let region = FeasibleRegion::Ball { radius };
            let (w, u) = (ParamVector::from_vec(w), ParamVector::from_vec(u));
            let lhs = (project(&w, &region) - project(&u, &region)).norm();
            prop_assert!(lhs <= (w - u).norm() + 1e-12);
        }

        #[test]
        fn projection_lands_in_ball(w in prop::collection::vec(-1e6f64..1e6, 1..8), radius in 1e-3f64..1e3) {
            let region = FeasibleRegion::Ball { radius };
            let p = project(&ParamVector::from_vec(w), &region);
            prop_assert!(p.norm() <= radius * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_oracle_keeps_iterate_fixed() {
        let p = convex();
        let w1 = init(&p, 1);
        let sched = StepSchedule::InverseLk { l: 0.1, scale: 1.0 };
        let opts = RunOptions {
            iterate_stride: Some(1),
            log_draws: false,
        };
        let t = run_sgd_with(&p, &ZeroOracle, &sched, &p.region(), 50, &w1, 0, opts).unwrap();
        assert!(t.iterates.iter().all(|(_, w)| *w == w1));
        assert_eq!(t.final_iterate, w1);
        assert!(!t.projection_activated());
    }

    #[test]
    fn non_finite_estimate_aborts_with_iteration() {
        let p = convex();
        let w1 = init(&p, 1);
        let sched = StepSchedule::Constant { gamma: 0.1 };
        let err = run_sgd(&p, &NanOracle, &sched, &p.region(), 5, &w1, 0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { k: 1 }));
    }

    #[test]
    fn overflowing_step_aborts_with_iteration() {
        let p = convex();
        let w1 = init(&p, 1);
        let sched = StepSchedule::Constant { gamma: 1e308 };
        let spec = EstimatorSpec::exact();
        let err = run_sgd(&p, &spec, &sched, &FeasibleRegion::Unconstrained, 50, &w1, 0);
        assert!(
            matches!(err, Err(Error::NonFiniteIterate { k: 2.. }) | Err(Error::NonFiniteGradient { k: 2.. })),
            "{err:?}"
        );
    }

    #[test]
    fn trace_invariants() {
        let p = convex();
        let l = p.curvature_constants(0).unwrap().l.unwrap();
        let w1 = init(&p, 2);
        let sched = StepSchedule::InverseLk { l, scale: 20.0 };
        let spec = EstimatorSpec::layered(30, 1, 1);
        let opts = RunOptions {
            iterate_stride: Some(1),
            log_draws: false,
        };
        let t = run_sgd_with(&p, &spec, &sched, &p.region(), 400, &w1, 3, opts).unwrap();
        assert_eq!(t.rows.len(), 400);
        assert_eq!(t.iterates.len(), 400);
        for (i, r) in t.rows.iter().enumerate() {
            assert_eq!(r.k, i + 1);
            assert!(r.dist_sq.is_finite() && r.f_gap >= 0.0 && r.avg_gap >= 0.0);
        }
        for pair in t.rows.windows(2) {
            assert!(pair[1].min_grad_norm_sq <= pair[0].min_grad_norm_sq);
        }
        let min = t.rows.iter().map(|r| r.grad_norm_sq).fold(f64::INFINITY, f64::min);
        assert_eq!(t.rows.last().unwrap().min_grad_norm_sq, min);
        for (_, w) in &t.iterates {
            assert!(w.norm() <= p.radius() + 1e-9);
        }
        let mut mean = ParamVector::zeros(p.dim());
        for (_, w) in &t.iterates {
            mean += w;
        }
        mean /= t.iterates.len() as f64;
        let scale = 1.0 + mean.norm();
        assert!((mean - &t.final_average).norm() <= 1e-10 * scale);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = convex();
        let w1 = init(&p, 4);
        let l = p.curvature_constants(0).unwrap().l.unwrap();
        let sched = StepSchedule::InverseLk { l, scale: 20.0 };
        let spec = EstimatorSpec::layered(30, 1, 1);
        let a = run_sgd(&p, &spec, &sched, &p.region(), 100, &w1, 5).unwrap();
        let b = run_sgd(&p, &spec, &sched, &p.region(), 100, &w1, 5).unwrap();
        assert_eq!(a, b);
        let c = run_sgd(&p, &spec, &sched, &p.region(), 100, &w1, 6).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn initial_iterate_must_be_feasible() {
        let p = convex();
        let w1 = ParamVector::from_element(p.dim(), 1e6);
        let sched = StepSchedule::Constant { gamma: 0.1 };
        assert!(run_sgd(&p, &EstimatorSpec::exact(), &sched, &p.region(), 5, &w1, 0).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let p = convex();
        let w1 = init(&p, 5);
        let sched = StepSchedule::Constant { gamma: 1.0 };
        let t = run_sgd(&p, &EstimatorSpec::minibatch(1), &sched, &p.region(), 20, &w1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        t.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(read_trace_csv(&path).unwrap(), t.rows);
    }

    #[test]
    fn mean_of_identical_traces_is_identity() {
        let p = convex();
        let w1 = init(&p, 6);
        let sched = StepSchedule::Constant { gamma: 1.0 };
        let t = run_sgd(&p, &EstimatorSpec::exact(), &sched, &p.region(), 10, &w1, 1).unwrap();
        let m = mean_rows(&[&t.rows, &t.rows]).unwrap();
        assert_eq!(m, t.rows);
    }
}
