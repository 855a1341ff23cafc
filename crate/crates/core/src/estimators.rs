//! Gradient estimators.
//!
//! Every estimator is the gradient of a layer-sampled surrogate objective.
//! For the convex problem, with input-layer index set `I1` and output-layer
//! index set `I2`,
//!
//! ```text
//! f_{n1,n2}(w) = ‖ (n/n1) A(I2,I1) X(I1,:) w − y(I2) ‖² / (2 n2)
//! ```
//!
//! and for the nonconvex problem, with an extra middle layer `I2` and
//! output layer `I3`,
//!
//! ```text
//! f_{n1,n2,n3} = ‖ (n/n2) A(I3,I2) σ((n/n1) A(I2,I1) X(I1,:) W1) W2 − y(I3) ‖² / (2 n3).
//! ```
//!
//! A layer that covers every node is used unscaled from the cached full
//! products, so full index sets reproduce [`GraphProblem::gradient`]
//! bit-for-bit.

use std::borrow::Cow;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problems::{convex_gradient, nonconvex_gradient, GraphProblem, ProblemKind};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::{fmt_f64, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorMode {
    Exact,
    /// Inner layers full, output layer subsampled: unbiased.
    MinibatchUnbiased,
    /// Every layer subsampled and rescaled: biased but consistent.
    LayeredConsistent,
}

impl EstimatorMode {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::Exact => "exact",
            EstimatorMode::MinibatchUnbiased => "minibatch_unbiased",
            EstimatorMode::LayeredConsistent => "layered_consistent",
        }
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorMode::Exact),
            "minibatch_unbiased" => Ok(EstimatorMode::MinibatchUnbiased),
            "layered_consistent" => Ok(EstimatorMode::LayeredConsistent),
            other => Err(Error::invalid("estimator", format!("unknown mode `{other}`"))),
        }
    }
}

/// Which estimator to draw and with how many nodes per layer.
///
/// `n1` is the input layer. For the convex problem `n2` is the output
/// layer; for the nonconvex problem `n2` is the middle layer and `n3` the
/// output layer. `MinibatchUnbiased` uses only the output-layer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EstimatorSpec {
    pub mode: EstimatorMode,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    /// Sample each layer with replacement (i.i.d. nodes) instead of as an
    /// index set.
    pub replacement: bool,
}

impl EstimatorSpec {
    pub fn exact() -> Self {
        Self {
            mode: EstimatorMode::Exact,
            n1: 1,
            n2: 1,
            n3: 1,
            replacement: false,
        }
    }

    /// Unbiased minibatch of `batch` output nodes. The batch size is stored
    /// in both `n2` and `n3` so the spec is valid for either problem kind.
    pub fn minibatch(batch: usize) -> Self {
        Self {
            mode: EstimatorMode::MinibatchUnbiased,
            n1: 1,
            n2: batch,
            n3: batch,
            replacement: false,
        }
    }

    pub fn layered(n1: usize, n2: usize, n3: usize) -> Self {
        Self {
            mode: EstimatorMode::LayeredConsistent,
            n1,
            n2,
            n3,
            replacement: false,
        }
    }

    pub fn with_replacement(mut self, replacement: bool) -> Self {
        self.replacement = replacement;
        self
    }

    /// Layer counts that actually matter for `kind`.
    pub fn sample_sizes(&self, kind: ProblemKind) -> Vec<usize> {
        match (self.mode, kind) {
            (EstimatorMode::Exact, _) => vec![],
            (EstimatorMode::MinibatchUnbiased, ProblemKind::Convex) => vec![self.n2],
            (EstimatorMode::MinibatchUnbiased, ProblemKind::Nonconvex) => vec![self.n3],
            (EstimatorMode::LayeredConsistent, ProblemKind::Convex) => vec![self.n1, self.n2],
            (EstimatorMode::LayeredConsistent, ProblemKind::Nonconvex) => {
                vec![self.n1, self.n2, self.n3]
            }
        }
    }

    pub fn validate(&self, problem: &GraphProblem) -> Result<()> {
        let n = problem.n();
        for count in self.sample_sizes(problem.kind()) {
            if count == 0 || count > n {
                return Err(Error::invalid(
                    "sample count",
                    format!("layer sample count {count} outside [1, {n}]"),
                ));
            }
        }
        Ok(())
    }

    /// Draw the layer index sets for one estimate.
    pub fn draw_layers<R: Rng>(&self, kind: ProblemKind, n: usize, rng: &mut R) -> LayerSample {
        let mut layer = |count: usize| draw_layer(rng, n, count, self.replacement);
        match (self.mode, kind) {
            (EstimatorMode::Exact, _) => LayerSample::full(),
            (EstimatorMode::MinibatchUnbiased, ProblemKind::Convex) => LayerSample {
                output: layer(self.n2),
                ..LayerSample::full()
            },
            (EstimatorMode::MinibatchUnbiased, ProblemKind::Nonconvex) => LayerSample {
                output: layer(self.n3),
                ..LayerSample::full()
            },
            (EstimatorMode::LayeredConsistent, ProblemKind::Convex) => {
                let input = layer(self.n1);
                let output = layer(self.n2);
                LayerSample {
                    input,
                    middle: None,
                    output,
                }
            }
            (EstimatorMode::LayeredConsistent, ProblemKind::Nonconvex) => {
                let input = layer(self.n1);
                let middle = layer(self.n2);
                let output = layer(self.n3);
                LayerSample {
                    input,
                    middle,
                    output,
                }
            }
        }
    }
}

/// Index sets per layer; `None` means the full layer. For the convex
/// problem `middle` is ignored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LayerSample {
    pub input: Option<Vec<usize>>,
    pub middle: Option<Vec<usize>>,
    pub output: Option<Vec<usize>>,
}

impl LayerSample {
    pub fn full() -> Self {
        Self::default()
    }
}

/// Uniform layer sample of `count` nodes out of `n`, sorted. Without
/// replacement a full draw collapses to `None`.
fn draw_layer<R: Rng>(rng: &mut R, n: usize, count: usize, replacement: bool) -> Option<Vec<usize>> {
    if replacement {
        let mut idx: Vec<usize> = (0..count).map(|_| rng.random_range(0..n)).collect();
        idx.sort_unstable();
        return Some(idx);
    }
    if count >= n {
        return None;
    }
    // partial Fisher–Yates
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool.sort_unstable();
    Some(pool)
}

fn gather_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn gather_vec(v: &DVector<f64>, rows: &Option<Vec<usize>>) -> DVector<f64> {
    match rows {
        None => v.clone(),
        Some(rows) => DVector::from_fn(rows.len(), |r, _| v[rows[r]]),
    }
}

/// `(n / |cols|) A(rows, cols)`, or the unscaled rows of `A` when `cols`
/// is the full layer.
fn aggregation<'a>(
    a: &'a DMatrix<f64>,
    rows: &Option<Vec<usize>>,
    cols: &Option<Vec<usize>>,
) -> Cow<'a, DMatrix<f64>> {
    match (rows, cols) {
        (None, None) => Cow::Borrowed(a),
        (Some(r), None) => Cow::Owned(gather_rows(a, r)),
        (rows, Some(cols)) => {
            let scale = a.ncols() as f64 / cols.len() as f64;
            let row_idx: Cow<[usize]> = match rows {
                Some(r) => Cow::Borrowed(r),
                None => Cow::Owned((0..a.nrows()).collect()),
            };
            Cow::Owned(DMatrix::from_fn(row_idx.len(), cols.len(), |r, c| {
                scale * a[(row_idx[r], cols[c])]
            }))
        }
    }
}

/// `(n/|I_in|) A(I_out, I_in) X(I_in, :)`, served from the cached `AX` when
/// the input layer is full.
fn aggregated_features<'a>(
    problem: &'a GraphProblem,
    rows: &Option<Vec<usize>>,
    input: &Option<Vec<usize>>,
) -> Cow<'a, DMatrix<f64>> {
    match input {
        None => match rows {
            None => Cow::Borrowed(problem.ax()),
            Some(r) => Cow::Owned(gather_rows(problem.ax(), r)),
        },
        Some(cols) => {
            let a_sub = aggregation(problem.adjacency().entries(), rows, input);
            let x_sub = gather_rows(problem.features().rows(), cols);
            Cow::Owned(a_sub.as_ref() * x_sub)
        }
    }
}

/// Gradient of the layer-sampled surrogate for explicit index sets.
pub fn gradient_for_layers(
    problem: &GraphProblem,
    w: &ParamVector,
    layers: &LayerSample,
) -> Result<ParamVector> {
    problem.check_dim(w)?;
    let y = gather_vec(problem.targets(), &layers.output);
    Ok(match problem.kind() {
        ProblemKind::Convex => {
            let b = aggregated_features(problem, &layers.output, &layers.input);
            convex_gradient(&b, &y, w)
        }
        ProblemKind::Nonconvex => {
            let b1 = aggregated_features(problem, &layers.middle, &layers.input);
            let a2 = aggregation(problem.adjacency().entries(), &layers.output, &layers.middle);
            nonconvex_gradient(&b1, &a2, &y, w, problem.d(), problem.d2())
        }
    })
}

/// One gradient draw.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub g: ParamVector,
    pub sample_sizes: Vec<usize>,
    pub draw_seed: u64,
}

pub fn estimate_gradient(
    spec: &EstimatorSpec,
    problem: &GraphProblem,
    w: &ParamVector,
    seed: u64,
) -> Result<GradientSample> {
    spec.validate(problem)?;
    let g = match spec.mode {
        EstimatorMode::Exact => problem.gradient(w)?,
        _ => {
            let mut rng = stream_rng(seed, stream::ESTIMATOR);
            let layers = spec.draw_layers(problem.kind(), problem.n(), &mut rng);
            gradient_for_layers(problem, w, &layers)?
        }
    };
    Ok(GradientSample {
        g,
        sample_sizes: spec.sample_sizes(problem.kind()),
        draw_seed: seed,
    })
}

/// Squared deviations `‖g_i − ∇f(w)‖²` of `trials` independent draws; trial
/// `i` uses seed `derive_seed(seed, i)`.
fn squared_deviations(
    spec: &EstimatorSpec,
    problem: &GraphProblem,
    w: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    spec.validate(problem)?;
    let h = problem.gradient(w)?;
    let devs = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = estimate_gradient(spec, problem, w, derive_seed(seed, i as u64))?;
            Ok((s.g - &h).norm_squared())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok((devs, h.norm()))
}

/// Monte Carlo mean squared error with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

pub fn estimator_mse_stats(
    spec: &EstimatorSpec,
    problem: &GraphProblem,
    w: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<MseEstimate> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let (devs, _) = squared_deviations(spec, problem, w, trials, seed)?;
    let t = trials as f64;
    let mean = devs.iter().sum::<f64>() / t;
    let std_err = if trials > 1 {
        let var = devs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (t - 1.0);
        (var / t).sqrt()
    } else {
        f64::NAN
    };
    Ok(MseEstimate {
        mean,
        std_err,
        trials,
    })
}

/// Mean of `‖g − ∇f(w)‖²` over `trials` draws.
pub fn estimator_mse(
    spec: &EstimatorSpec,
    problem: &GraphProblem,
    w: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    Ok(estimator_mse_stats(spec, problem, w, trials, seed)?.mean)
}

/// Empirical relative-deviation tail probability at one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub delta: f64,
    /// Per-layer sample size.
    pub sample_size: usize,
    pub trials: usize,
    /// Fraction of draws with `‖g − ∇f(w)‖ ≥ δ ‖∇f(w)‖`.
    pub p_hat: f64,
}

impl EstimatorSpec {
    /// Replace the per-layer counts with `size`: `n1` for the convex
    /// problem, `n1 = n2` for the nonconvex one. Other counts are kept.
    pub fn at_sample_size(&self, kind: ProblemKind, size: usize) -> Self {
        let mut spec = *self;
        spec.n1 = size;
        if kind == ProblemKind::Nonconvex {
            spec.n2 = size;
        }
        spec
    }
}

pub fn empirical_tail(
    spec: &EstimatorSpec,
    problem: &GraphProblem,
    w: &ParamVector,
    delta: f64,
    sample_size: usize,
    trials: usize,
    seed: u64,
) -> Result<TailEstimate> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let spec = spec.at_sample_size(problem.kind(), sample_size);
    let (devs, h_norm) = squared_deviations(&spec, problem, w, trials, seed)?;
    if h_norm == 0.0 {
        return Err(Error::ZeroGradient);
    }
    let threshold = delta * h_norm;
    let hits = devs.iter().filter(|d| d.sqrt() >= threshold).count();
    Ok(TailEstimate {
        delta,
        sample_size,
        trials,
        p_hat: hits as f64 / trials as f64,
    })
}

/// Exponential-tail fit `p(N) ≈ C exp(−N τ)` over a grid of sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct TailProfile {
    pub points: Vec<TailEstimate>,
    /// Fitted decay rate; `None` with fewer than two points strictly inside
    /// (0, 1) or a non-positive fitted slope.
    pub tau_hat: Option<f64>,
    /// Fitted prefactor `exp(−intercept)`.
    pub c_hat: Option<f64>,
    /// Number of grid points used in the fit.
    pub usable: usize,
    /// Some grid point had `p_hat = 0`.
    pub zero_encountered: bool,
}

/// Least squares of `−log p_hat` against `N` over points with
/// `p_hat ∈ (0, 1)`.
pub fn fit_tail(points: &[TailEstimate]) -> TailProfile {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.p_hat > 0.0 && p.p_hat < 1.0)
        .map(|p| (p.sample_size as f64, -p.p_hat.ln()))
        .collect();
    let zero_encountered = points.iter().any(|p| p.p_hat == 0.0);
    let (tau_hat, c_hat) = match least_squares(&usable) {
        Some((slope, intercept)) if slope > 0.0 => (Some(slope), Some((-intercept).exp())),
        _ => (None, None),
    };
    TailProfile {
        points: points.to_vec(),
        tau_hat,
        c_hat,
        usable: usable.len(),
        zero_encountered,
    }
}

/// Simple linear regression `y = slope x + intercept`.
pub(crate) fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// [`empirical_tail`] over a grid, then [`fit_tail`]. Grid point `j` uses
/// seed `derive_seed(seed, j)`.
#[allow(clippy::too_many_arguments)]
pub fn tail_profile(
    spec: &EstimatorSpec,
    problem: &GraphProblem,
    w: &ParamVector,
    delta: f64,
    grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<TailProfile> {
    let points = grid
        .iter()
        .enumerate()
        .map(|(j, &size)| {
            empirical_tail(spec, problem, w, delta, size, trials, derive_seed(seed, j as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(fit_tail(&points))
}

/// CSV with columns `N,delta,p_hat,trials`.
pub fn write_tail_csv(path: &Path, points: &[TailEstimate]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "N,delta,p_hat,trials")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.sample_size,
            fmt_f64(p.delta),
            fmt_f64(p.p_hat),
            p.trials
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::MixtureParams;
    use crate::problems::{standard_normal, ProblemParams};

    fn tiny(kind: ProblemKind, n: usize) -> GraphProblem {
        let params = ProblemParams {
            kind,
            n,
            p: 1.0,
            d: 3,
            d2: 2,
            mixture: MixtureParams::standard(3),
        };
        GraphProblem::generate(&params, 17).unwrap()
    }

    fn default_convex() -> GraphProblem {
        GraphProblem::generate(&ProblemParams::standard(ProblemKind::Convex), 0).unwrap()
    }

    fn point(p: &GraphProblem, seed: u64) -> ParamVector {
        standard_normal(p.dim(), &mut stream_rng(seed, stream::VERIFY))
    }

    #[test]
    fn exact_mode_is_bitwise_gradient() {
        for kind in [ProblemKind::Convex, ProblemKind::Nonconvex] {
            let p = tiny(kind, 6);
            let w = point(&p, 1);
            let s = estimate_gradient(&EstimatorSpec::exact(), &p, &w, 9).unwrap();
            assert_eq!(s.g, p.gradient(&w).unwrap());
        }
    }

    #[test]
    fn full_layers_reproduce_gradient_bitwise() {
        let p = tiny(ProblemKind::Nonconvex, 6);
        let w = point(&p, 2);
        let spec = EstimatorSpec::layered(6, 6, 6);
        let s = estimate_gradient(&spec, &p, &w, 3).unwrap();
        assert_eq!(s.g, p.gradient(&w).unwrap());
        assert_eq!(s.sample_sizes, vec![6, 6, 6]);
    }

    #[test]
    fn default_layered_draw_is_finite() {
        let p = default_convex();
        let w = point(&p, 3);
        let s = estimate_gradient(&EstimatorSpec::layered(30, 1, 1), &p, &w, 4).unwrap();
        assert_eq!(s.g.len(), 10);
        assert!(s.g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn counts_above_population_rejected() {
        let p = tiny(ProblemKind::Convex, 5);
        let w = point(&p, 1);
        assert!(estimate_gradient(&EstimatorSpec::layered(6, 1, 1), &p, &w, 0).is_err());
        assert!(estimate_gradient(&EstimatorSpec::minibatch(0), &p, &w, 0).is_err());
        // counts are ignored in exact mode
        let mut exact = EstimatorSpec::exact();
        exact.n1 = 99;
        assert!(estimate_gradient(&exact, &p, &w, 0).is_ok());
    }

    /// All `k`-subsets of `0..n`, lexicographic.
    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if cur.len() == k {
                out.push(cur.clone());
                return;
            }
            for i in start..n {
                cur.push(i);
                rec(i + 1, n, k, cur, out);
                cur.pop();
            }
        }
        rec(0, n, k, &mut cur, &mut out);
        out
    }

    #[test]
    fn minibatch_expectation_equals_gradient_by_enumeration() {
        for kind in [ProblemKind::Convex, ProblemKind::Nonconvex] {
            for n in [4usize, 5, 6] {
                let p = tiny(kind, n);
                let w = point(&p, n as u64);
                let h = p.gradient(&w).unwrap();
                for k in 1..n {
                    let sets = subsets(n, k);
                    let mut mean = ParamVector::zeros(p.dim());
                    for s in &sets {
                        let layers = LayerSample {
                            output: Some(s.clone()),
                            ..LayerSample::full()
                        };
                        mean += gradient_for_layers(&p, &w, &layers).unwrap();
                    }
                    mean /= sets.len() as f64;
                    assert!((mean - &h).amax() <= 1e-12, "{kind} n={n} k={k}");
                }
            }
        }
    }

    #[test]
    fn layered_estimator_is_biased() {
        // Enumerating every input set of size 1 shows E[g] != ∇f for the
        // consistent estimator.
        let p = tiny(ProblemKind::Convex, 4);
        let w = point(&p, 8);
        let h = p.gradient(&w).unwrap();
        let mut mean = ParamVector::zeros(p.dim());
        for s in subsets(4, 1) {
            let layers = LayerSample {
                input: Some(s),
                ..LayerSample::full()
            };
            mean += gradient_for_layers(&p, &w, &layers).unwrap() / 4.0;
        }
        assert!((mean - h).amax() > 1e-6);
    }

    #[test]
    fn mse_zero_for_exact_and_full_layers() {
        let p = tiny(ProblemKind::Convex, 6);
        let w = point(&p, 4);
        assert_eq!(estimator_mse(&EstimatorSpec::exact(), &p, &w, 10, 0).unwrap(), 0.0);
        assert!(estimator_mse(&EstimatorSpec::layered(6, 6, 6), &p, &w, 10, 0).unwrap() <= 1e-20);
        assert!(estimator_mse(&EstimatorSpec::layered(2, 6, 6), &p, &w, 50, 0).unwrap() > 0.0);
    }

    #[test]
    fn mse_decreases_with_input_sample_size() {
        let p = default_convex();
        let w = point(&p, 5);
        let stats: Vec<MseEstimate> = [10, 30, 100, 300]
            .iter()
            .map(|&n1| {
                estimator_mse_stats(&EstimatorSpec::layered(n1, 300, 1), &p, &w, 2000, 6).unwrap()
            })
            .collect();
        for pair in stats.windows(2) {
            let slack = 2.0 * (pair[0].std_err.powi(2) + pair[1].std_err.powi(2)).sqrt();
            assert!(pair[1].mean < pair[0].mean - slack, "{pair:?}");
        }
        assert_eq!(stats[3].mean, 0.0);
    }

    #[test]
    fn with_replacement_full_count_is_not_exact() {
        let p = tiny(ProblemKind::Convex, 6);
        let w = point(&p, 6);
        let spec = EstimatorSpec::layered(6, 6, 1).with_replacement(true);
        assert!(estimator_mse(&spec, &p, &w, 50, 1).unwrap() > 0.0);
    }

    #[test]
    fn exact_tail_is_zero() {
        let p = tiny(ProblemKind::Convex, 6);
        let w = point(&p, 7);
        let t = empirical_tail(&EstimatorSpec::exact(), &p, &w, 0.1, 3, 100, 0).unwrap();
        assert_eq!(t.p_hat, 0.0);
    }

    #[test]
    fn tail_rejects_zero_gradient_and_bad_delta() {
        let p = tiny(ProblemKind::Convex, 6);
        let w = p.w_star().clone();
        let spec = EstimatorSpec::layered(3, 6, 1);
        assert!(matches!(
            empirical_tail(&spec, &p, &w, 0.5, 3, 10, 0),
            Err(Error::ZeroGradient)
        ));
        assert!(empirical_tail(&spec, &p, &point(&p, 1), 0.0, 3, 10, 0).is_err());
    }

    #[test]
    fn tail_nonincreasing_in_sample_size() {
        let p = default_convex();
        let w = point(&p, 8);
        let spec = EstimatorSpec::layered(1, 300, 1);
        let trials = 2000;
        let pts: Vec<TailEstimate> = [10, 30, 100]
            .iter()
            .map(|&size| empirical_tail(&spec, &p, &w, 0.5, size, trials, 3).unwrap())
            .collect();
        for pair in pts.windows(2) {
            let se = |q: f64| (q * (1.0 - q) / trials as f64).sqrt();
            let slack = 2.0 * (se(pair[0].p_hat).powi(2) + se(pair[1].p_hat).powi(2)).sqrt();
            assert!(pair[1].p_hat <= pair[0].p_hat + slack, "{pair:?}");
        }
    }

    #[test]
    fn tail_is_reproducible() {
        let p = default_convex();
        let w = point(&p, 9);
        let spec = EstimatorSpec::layered(1, 300, 1);
        let a = empirical_tail(&spec, &p, &w, 0.25, 30, 2000, 11).unwrap();
        let b = empirical_tail(&spec, &p, &w, 0.25, 30, 2000, 11).unwrap();
        assert_eq!(a.p_hat.to_bits(), b.p_hat.to_bits());
        assert!((0.0..=1.0).contains(&a.p_hat));
    }

    #[test]
    fn tail_fit_recovers_exponential() {
        let pts: Vec<TailEstimate> = [5, 10, 20, 40]
            .iter()
            .map(|&n| TailEstimate {
                delta: 0.1,
                sample_size: n,
                trials: 1,
                p_hat: 0.8 * (-0.07 * n as f64).exp(),
            })
            .collect();
        let fit = fit_tail(&pts);
        assert!((fit.tau_hat.unwrap() - 0.07).abs() < 1e-12);
        assert!((fit.c_hat.unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(fit.usable, 4);
    }

    #[test]
    fn tail_fit_skips_saturated_points() {
        let mk = |n, p_hat| TailEstimate {
            delta: 0.1,
            sample_size: n,
            trials: 10,
            p_hat,
        };
        let fit = fit_tail(&[mk(1, 1.0), mk(2, 0.5), mk(3, 0.0)]);
        assert_eq!(fit.usable, 1);
        assert!(fit.zero_encountered);
        assert!(fit.tau_hat.is_none());
    }

    #[test]
    fn layer_draws_are_sets() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..100 {
            let s = draw_layer(&mut rng, 20, 7, false).unwrap();
            assert_eq!(s.len(), 7);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(draw_layer(&mut rng, 20, 20, false).is_none());
    }

    #[test]
    fn tail_csv_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tail.csv");
        let pts = [TailEstimate {
            delta: 0.25,
            sample_size: 30,
            trials: 100,
            p_hat: 0.5,
        }];
        write_tail_csv(&path, &pts).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert!(text.starts_with("N,delta,p_hat,trials\n30,"));
    }
}
