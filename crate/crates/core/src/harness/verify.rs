//! Property checks over random instances, reported with measured margins.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::bounds::{bound_value, BoundConstants, TheoremId};
use crate::error::Result;
use crate::estimators::{estimator_mse_stats, gradient_for_layers, EstimatorSpec, LayerSample};
use crate::optimizer::{project, run_sgd_with, DrawRecord, FeasibleRegion, RunOptions, StepSchedule};
use crate::problems::{standard_normal, GraphProblem, ProblemKind, ProblemParams};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::ParamVector;

pub const PROJECTION_PAIRS: usize = 100_000;
pub const INEQUALITY_PAIRS: usize = 1_000;
pub const LOGGED_DRAWS: usize = 1_000;
pub const FD_POINTS: usize = 50;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;
pub const MSE_TRIALS: usize = 2_000;
pub const MSE_GRID: [usize; 4] = [10, 30, 100, 300];
pub const REDUCTION_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst measured quantity; `passed` iff it respects `tolerance` in the
    /// direction stated by `detail`.
    pub measured: f64,
    pub tolerance: f64,
    pub cases: usize,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: impl Into<String>, measured: f64, tolerance: f64, cases: usize, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            cases,
            detail: detail.into(),
        }
    }

    fn errored(name: impl Into<String>, err: crate::Error) -> Self {
        Self {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            cases: 0,
            detail: format!("error: {err}"),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} measured={:e} tolerance={:e} cases={} ({})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.cases,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn collect(name: &str, r: Result<CheckResult>) -> CheckResult {
    r.unwrap_or_else(|e| CheckResult::errored(name, e))
}

/// Random point for pair sweeps: standard normal, scaled by 1 or 10,
/// projected into the problem's ball.
fn random_point(problem: &GraphProblem, seed: u64, i: usize) -> (ParamVector, ParamVector) {
    let mut rng = stream_rng(derive_seed(seed, i as u64), stream::VERIFY);
    let scale = if i.is_multiple_of(2) { 1.0 } else { 10.0 };
    let region = problem.region();
    let w = project(&(standard_normal(problem.dim(), &mut rng) * scale), &region);
    let u = project(&(standard_normal(problem.dim(), &mut rng) * scale), &region);
    (w, u)
}

/// `‖Π(w) − Π(u)‖ − ‖w − u‖ ≤ 1e-12` over random pairs in R^10, with the
/// ball radius drawn so both branches of the projection are exercised.
pub fn check_projection_nonexpansion(pairs: usize, seed: u64) -> CheckResult {
    let worst = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(derive_seed(seed, i as u64), stream::VERIFY);
            let radius: f64 = rng.random_range(0.1..10.0);
            let region = FeasibleRegion::Ball { radius };
            let w = standard_normal(10, &mut rng) * rng.random_range(0.1..10.0);
            let u = standard_normal(10, &mut rng) * rng.random_range(0.1..10.0);
            (project(&w, &region) - project(&u, &region)).norm() - (w - u).norm()
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    CheckResult::at_most(
        "projection_nonexpansion",
        worst,
        1e-12,
        pairs,
        "max of ‖Π(w)−Π(u)‖ − ‖w−u‖",
    )
}

/// `f(w) − f(u) − ⟨∇f(u), w−u⟩ − (l/2)‖w−u‖² ≥ −1e-9`.
pub fn check_strong_convexity(problem: &GraphProblem, l: f64, pairs: usize, seed: u64) -> Result<CheckResult> {
    let worst = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let (w, u) = random_point(problem, seed, i);
            let diff = &w - &u;
            let gap = problem.objective(&w)? - problem.objective(&u)?
                - problem.gradient(&u)?.dot(&diff)
                - 0.5 * l * diff.norm_squared();
            Ok(-gap)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        "strong_convexity",
        worst,
        1e-9,
        pairs,
        "max shortfall below the quadratic lower bound",
    ))
}

/// `⟨∇f(u), u − w*⟩ ≥ l‖u − w*‖² − 1e-9`.
pub fn check_optimum_growth(problem: &GraphProblem, l: f64, points: usize, seed: u64) -> Result<CheckResult> {
    let w_star = problem.w_star();
    let worst = (0..points)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let (u, _) = random_point(problem, seed ^ 0x2, i);
            let e = &u - w_star;
            Ok(l * e.norm_squared() - problem.gradient(&u)?.dot(&e))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        "strong_convexity_at_optimum",
        worst,
        1e-9,
        points,
        "max of l‖u−w*‖² − ⟨∇f(u), u−w*⟩",
    ))
}

/// `‖∇f(w) − ∇f(u)‖ ≤ L‖w − u‖ (1 + 1e-9)`, reported as the worst
/// `ratio / L − 1`.
pub fn check_smoothness(problem: &GraphProblem, big_l: f64, pairs: usize, seed: u64) -> Result<CheckResult> {
    let region = problem.region();
    let worst = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut rng = stream_rng(derive_seed(seed, i as u64), stream::VERIFY);
            let w = project(&standard_normal(problem.dim(), &mut rng), &region);
            let scale = if i % 2 == 0 { 1.0 } else { 1e-3 };
            let u = project(&(&w + standard_normal(problem.dim(), &mut rng) * scale), &region);
            let gap = (&w - &u).norm();
            if gap == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let ratio = (problem.gradient(&w)? - problem.gradient(&u)?).norm() / gap;
            Ok(ratio / big_l - 1.0)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        format!("smoothness_{}", problem.kind()),
        worst,
        1e-9,
        pairs,
        format!("max of ‖Δ∇f‖/(L‖Δw‖) − 1 with L = {big_l:e}"),
    ))
}

/// Central finite differences against a supplied gradient, relative error
/// `‖fd − g‖ / ‖g‖`.
pub fn check_finite_differences_with<F>(problem: &GraphProblem, gradient: F, points: usize, seed: u64) -> Result<CheckResult>
where
    F: Fn(&ParamVector) -> Result<ParamVector> + Sync,
{
    let worst = (0..points)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let (w, _) = random_point(problem, seed ^ 0x3, i);
            let g = gradient(&w)?;
            let mut fd = ParamVector::zeros(w.len());
            for j in 0..w.len() {
                let mut plus = w.clone();
                plus[j] += FD_STEP;
                let mut minus = w.clone();
                minus[j] -= FD_STEP;
                fd[j] = (problem.objective(&plus)? - problem.objective(&minus)?) / (2.0 * FD_STEP);
            }
            let scale = g.norm().max(f64::MIN_POSITIVE);
            Ok((fd - g).norm() / scale)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        format!("finite_differences_{}", problem.kind()),
        worst,
        FD_TOLERANCE,
        points,
        "max relative error ‖fd − ∇f‖/‖∇f‖, step 1e-5",
    ))
}

pub fn check_finite_differences(problem: &GraphProblem, points: usize, seed: u64) -> Result<CheckResult> {
    check_finite_differences_with(problem, |w| problem.gradient(w), points, seed)
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    rec(0, n, size, &mut cur, &mut out);
    out
}

/// Small instance used by the brute-force checks.
pub fn tiny_problem(kind: ProblemKind, n: usize, seed: u64) -> Result<GraphProblem> {
    let mut params = ProblemParams::standard(kind);
    params.n = n;
    params.p = 1.0;
    GraphProblem::generate(&params, seed)
}

/// Exact expectation of the minibatch estimator, by enumerating every
/// output index set of every size `1..n`, against the full gradient.
pub fn check_unbiasedness(problem: &GraphProblem, seed: u64) -> Result<CheckResult> {
    let n = problem.n();
    let mut rng = stream_rng(seed, stream::VERIFY);
    let w = standard_normal(problem.dim(), &mut rng);
    let h = problem.gradient(&w)?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for size in 1..n {
        let sets = subsets(n, size);
        let mut mean = ParamVector::zeros(problem.dim());
        for s in &sets {
            let layers = LayerSample {
                output: Some(s.clone()),
                ..LayerSample::full()
            };
            mean += gradient_for_layers(problem, &w, &layers)?;
        }
        mean /= sets.len() as f64;
        worst = worst.max((mean - &h).amax());
        cases += sets.len();
    }
    Ok(CheckResult::at_most(
        format!("unbiasedness_{}_n{}", problem.kind(), n),
        worst,
        1e-12,
        cases,
        "max abs error of the enumerated expectation",
    ))
}

/// Logged draws from a consistent-estimator run on the convex problem.
pub fn logged_draws(problem: &GraphProblem, l: f64, draws: usize, seed: u64) -> Result<Vec<DrawRecord>> {
    let w1 = project(&standard_normal(problem.dim(), &mut stream_rng(seed, stream::INIT)), &problem.region());
    let schedule = StepSchedule::InverseLk { l, scale: 20.0 };
    let spec = EstimatorSpec::layered(30, 1, 1);
    let opts = RunOptions {
        iterate_stride: None,
        log_draws: true,
    };
    Ok(run_sgd_with(problem, &spec, &schedule, &problem.region(), draws, &w1, seed, opts)?.draws)
}

/// `‖w_{k+1} − w*‖² ≤ ‖w_k − w*‖² − 2γ⟨g, w_k − w*⟩ + γ²‖g‖²`, with a
/// relative slack of 1e-12 on the magnitude of the right-hand terms.
pub fn check_one_step_expansion(draws: &[DrawRecord], w_star: &ParamVector) -> CheckResult {
    let worst = draws
        .iter()
        .map(|d| {
            let e = &d.w - w_star;
            let cross = d.g.dot(&e);
            let rhs = e.norm_squared() - 2.0 * d.gamma * cross + d.gamma * d.gamma * d.g.norm_squared();
            let scale = e.norm_squared() + 2.0 * d.gamma * cross.abs() + d.gamma * d.gamma * d.g.norm_squared();
            ((&d.w_next - w_star).norm_squared() - rhs) / scale.max(f64::MIN_POSITIVE)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    CheckResult::at_most(
        "one_step_expansion",
        worst,
        1e-12,
        draws.len(),
        "max relative excess of ‖w_{k+1}−w*‖² over the expansion",
    )
}

/// With each draw's realised `δ = ‖g − h‖ / ‖h‖`: the sandwich
/// `(1−δ)‖h‖ ≤ ‖g‖ ≤ (1+δ)‖h‖` and
/// `|⟨g − h, w − w*⟩| ≤ (δ/2)(‖h‖² + ‖w − w*‖²)`, absolute slack 1e-12.
pub fn check_relative_deviation(draws: &[DrawRecord], w_star: &ParamVector) -> CheckResult {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for d in draws {
        let h_norm = d.h.norm();
        if h_norm == 0.0 {
            continue;
        }
        cases += 1;
        let dev = &d.g - &d.h;
        let delta = dev.norm() / h_norm;
        let g_norm = d.g.norm();
        let e = &d.w - w_star;
        let lower = (1.0 - delta) * h_norm - g_norm;
        let upper = g_norm - (1.0 + delta) * h_norm;
        let inner = dev.dot(&e).abs() - 0.5 * delta * (h_norm * h_norm + e.norm_squared());
        worst = worst.max(lower).max(upper).max(inner);
    }
    CheckResult::at_most(
        "relative_deviation",
        worst,
        1e-12,
        cases,
        "max violation of the sandwich and inner-product bounds",
    )
}

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

/// High-probability bounds at `ρ = δ = 0` against their expectation
/// counterparts at `k = T`. Half the grid uses dyadic rationals (must be
/// bitwise), half generic doubles (at most 1 ulp).
pub fn check_reduction_identities(points: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = stream_rng(seed, stream::VERIFY);
    let mut worst_rational = 0u64;
    let mut worst_generic = 0u64;
    for i in 0..points {
        let rational = i % 2 == 0;
        let mut draw = |lo: f64, hi: f64| -> f64 {
            let v: f64 = rng.random_range(lo..hi);
            if rational {
                ((v * 64.0).round().max(1.0)) / 64.0
            } else {
                v
            }
        };
        let consts = BoundConstants {
            g: Some(draw(0.01, 100.0)),
            l: Some(draw(0.01, 10.0)),
            big_l: Some(draw(0.01, 100.0)),
            d: Some(draw(0.01, 1e4)),
            c: Some(draw(0.01, 10.0)),
            d_f: Some(draw(0.01, 100.0)),
            rho: Some(0.0),
            delta: Some(0.0),
            horizon: None,
        };
        let t: usize = rng.random_range(3..100_000);
        for theorem in TheoremId::ALL {
            if let Some(base) = theorem.unbiased_counterpart() {
                let u = ulps(bound_value(theorem, &consts, t)?, bound_value(base, &consts, t)?);
                if rational {
                    worst_rational = worst_rational.max(u);
                } else {
                    worst_generic = worst_generic.max(u);
                }
            }
        }
    }
    Ok(CheckResult {
        name: "reduction_identities".into(),
        passed: worst_rational == 0 && worst_generic <= 1,
        measured: worst_rational.max(worst_generic) as f64,
        tolerance: 1.0,
        cases: points,
        detail: format!("max ulp distance: dyadic inputs {worst_rational}, generic inputs {worst_generic}"),
    })
}

/// Estimator MSE over `grid` of `n1` values with every other layer full:
/// each step down must exceed twice the combined standard error, and the
/// full-count MSE must be exactly 0.
pub fn check_mse_monotone(
    problem: &GraphProblem,
    w: &ParamVector,
    grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<CheckResult> {
    let n = problem.n();
    let stats = grid
        .iter()
        .enumerate()
        .map(|(j, &n1)| {
            let spec = EstimatorSpec::layered(n1, n, n).at_sample_size(ProblemKind::Convex, n1);
            estimator_mse_stats(&spec, problem, w, trials, derive_seed(seed, j as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let full = estimator_mse_stats(&EstimatorSpec::layered(n, n, n), problem, w, trials.min(50), seed)?;
    let mut margin = f64::INFINITY;
    for pair in stats.windows(2) {
        let slack = 2.0 * (pair[0].std_err.powi(2) + pair[1].std_err.powi(2)).sqrt();
        margin = margin.min(pair[0].mean - slack - pair[1].mean);
    }
    let means: Vec<String> = stats.iter().map(|s| format!("{:e}", s.mean)).collect();
    Ok(CheckResult {
        name: "estimator_mse_monotone".into(),
        passed: margin > 0.0 && full.mean == 0.0,
        measured: margin,
        tolerance: 0.0,
        cases: trials * grid.len(),
        detail: format!(
            "n1 = {grid:?}, MSE = [{}], full-count MSE = {:e}; measured is the smallest drop beyond 2 SE",
            means.join(", "),
            full.mean
        ),
    })
}

/// Run every check with default sizes on instances derived from `seed`.
pub fn verify_suite(seed: u64) -> VerifyReport {
    let mut checks = vec![check_projection_nonexpansion(PROJECTION_PAIRS, seed)];

    match GraphProblem::generate(&ProblemParams::standard(ProblemKind::Convex), seed) {
        Ok(convex) => match convex.curvature_constants(seed) {
            Ok(cc) => {
                let l = cc.l.unwrap_or(0.0);
                checks.push(collect("strong_convexity", check_strong_convexity(&convex, l, INEQUALITY_PAIRS, seed)));
                checks.push(collect("strong_convexity_at_optimum", check_optimum_growth(&convex, l, INEQUALITY_PAIRS, seed)));
                checks.push(collect("smoothness_convex", check_smoothness(&convex, cc.smoothness, INEQUALITY_PAIRS, seed)));
                checks.push(collect("finite_differences_convex", check_finite_differences(&convex, FD_POINTS, seed)));
                match logged_draws(&convex, l, LOGGED_DRAWS, seed) {
                    Ok(draws) => {
                        checks.push(check_one_step_expansion(&draws, convex.w_star()));
                        checks.push(check_relative_deviation(&draws, convex.w_star()));
                    }
                    Err(e) => checks.push(CheckResult::errored("logged_draws", e)),
                }
                let w = project(&standard_normal(convex.dim(), &mut stream_rng(seed, stream::INIT)), &convex.region());
                checks.push(collect("estimator_mse_monotone", check_mse_monotone(&convex, &w, &MSE_GRID, MSE_TRIALS, seed)));
            }
            Err(e) => checks.push(CheckResult::errored("curvature_convex", e)),
        },
        Err(e) => checks.push(CheckResult::errored("problem_convex", e)),
    }

    match GraphProblem::generate(&ProblemParams::standard(ProblemKind::Nonconvex), seed) {
        Ok(nonconvex) => {
            match nonconvex.curvature_constants(seed) {
                Ok(cc) => checks.push(collect(
                    "smoothness_nonconvex",
                    check_smoothness(&nonconvex, cc.smoothness, INEQUALITY_PAIRS, derive_seed(seed, 1)),
                )),
                Err(e) => checks.push(CheckResult::errored("curvature_nonconvex", e)),
            }
            checks.push(collect("finite_differences_nonconvex", check_finite_differences(&nonconvex, FD_POINTS, seed)));
        }
        Err(e) => checks.push(CheckResult::errored("problem_nonconvex", e)),
    }

    for kind in [ProblemKind::Convex, ProblemKind::Nonconvex] {
        for n in [4, 5, 6] {
            let name = format!("unbiasedness_{kind}_n{n}");
            checks.push(collect(&name, tiny_problem(kind, n, seed).and_then(|p| check_unbiasedness(&p, seed))));
        }
    }
    checks.push(collect("reduction_identities", check_reduction_identities(REDUCTION_POINTS, seed)));

    VerifyReport { seed, checks }
}
