//! The two least-squares graph objectives and their analytic gradients.
//!
//! Convex: `f(w) = ‖A X w − y‖² / (2n)` with `w ∈ R^d`.
//!
//! Nonconvex: `f(W1, W2) = ‖A σ(A X W1) W2 − y‖² / (2n)` with `W1 ∈ R^{d×d2}`,
//! `W2 ∈ R^{d2}` and σ the logistic sigmoid.
//!
//! Both are minimised over the ball `‖w‖ ≤ radius` with radius `100 d`
//! (convex) or `100 (d + 1) d2` (nonconvex).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datagen::{
    gen_adjacency, gen_features, gen_ground_truth, AdjacencyMatrix, FeatureMatrix, GroundTruth,
    MixtureParams,
};
use crate::error::{Error, Result};
use crate::optimizer::{project, FeasibleRegion};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Convex,
    Nonconvex,
}

impl ProblemKind {
    pub fn param_dim(self, d: usize, d2: usize) -> usize {
        match self {
            ProblemKind::Convex => d,
            ProblemKind::Nonconvex => d * d2 + d2,
        }
    }

    pub fn radius(self, d: usize, d2: usize) -> f64 {
        match self {
            ProblemKind::Convex => 100.0 * d as f64,
            ProblemKind::Nonconvex => 100.0 * ((d + 1) * d2) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Convex => "convex",
            ProblemKind::Nonconvex => "nonconvex",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex" => Ok(ProblemKind::Convex),
            "nonconvex" => Ok(ProblemKind::Nonconvex),
            other => Err(Error::invalid("kind", format!("unknown problem kind `{other}`"))),
        }
    }
}

/// Everything needed to regenerate an instance from a seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemParams {
    pub kind: ProblemKind,
    pub n: usize,
    pub p: f64,
    pub d: usize,
    pub d2: usize,
    pub mixture: MixtureParams,
}

impl ProblemParams {
    /// n = 300, p = 0.3, d = 10, d2 = 5 with the standard mixture.
    pub fn standard(kind: ProblemKind) -> Self {
        Self {
            kind,
            n: 300,
            p: 0.3,
            d: 10,
            d2: 5,
            mixture: MixtureParams::standard(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureConstants {
    /// Strong-convexity modulus `σ_min(AX)² / n`; `None` for the nonconvex
    /// problem, `Some(0.0)` when `AX` is rank deficient.
    pub l: Option<f64>,
    /// Smoothness modulus: exact `σ_max(AX)² / n` for the convex problem,
    /// an inflated empirical Lipschitz estimate for the nonconvex one.
    pub smoothness: f64,
    /// Empirical gradient-norm bound, filled in from a run trace.
    pub g_hat: Option<f64>,
}

/// Immutable problem instance.
#[derive(Debug, Clone)]
pub struct GraphProblem {
    kind: ProblemKind,
    adjacency: AdjacencyMatrix,
    features: FeatureMatrix,
    y: DVector<f64>,
    d2: usize,
    radius: f64,
    w_star: ParamVector,
    f_star: f64,
    ax: DMatrix<f64>,
}

impl GraphProblem {
    pub fn generate(params: &ProblemParams, seed: u64) -> Result<Self> {
        if params.mixture.dim() != params.d {
            return Err(Error::DimensionMismatch {
                context: "mixture dimension vs d",
                expected: params.d,
                got: params.mixture.dim(),
            });
        }
        let adjacency = gen_adjacency(params.n, params.p, seed)?;
        let features = gen_features(params.n, &params.mixture, seed)?;
        let truth = gen_ground_truth(params.kind, &adjacency, &features, params.d2, seed)?;
        Self::from_parts(params.kind, adjacency, features, truth, params.d2)
    }

    /// Assemble a problem with the default ball radius for its kind.
    pub fn from_parts(
        kind: ProblemKind,
        adjacency: AdjacencyMatrix,
        features: FeatureMatrix,
        truth: GroundTruth,
        d2: usize,
    ) -> Result<Self> {
        let radius = kind.radius(features.d(), d2);
        Self::with_radius(kind, adjacency, features, truth, d2, radius)
    }

    pub fn with_radius(
        kind: ProblemKind,
        adjacency: AdjacencyMatrix,
        features: FeatureMatrix,
        truth: GroundTruth,
        d2: usize,
        radius: f64,
    ) -> Result<Self> {
        let n = adjacency.n();
        if features.n() != n {
            return Err(Error::DimensionMismatch {
                context: "features rows vs adjacency",
                expected: n,
                got: features.n(),
            });
        }
        if truth.y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "targets vs adjacency",
                expected: n,
                got: truth.y.len(),
            });
        }
        let dim = kind.param_dim(features.d(), d2);
        if dim == 0 || truth.w_star.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "planted optimum",
                expected: dim,
                got: truth.w_star.len(),
            });
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("radius", "must be positive"));
        }
        if truth.w_star.norm() > radius {
            return Err(Error::invalid(
                "radius",
                format!("planted optimum (norm {}) lies outside the ball", truth.w_star.norm()),
            ));
        }
        let ax = adjacency.entries() * features.rows();
        Ok(Self {
            kind,
            adjacency,
            features,
            y: truth.y,
            d2,
            radius,
            w_star: truth.w_star,
            f_star: truth.f_star,
            ax,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }
    pub fn n(&self) -> usize {
        self.adjacency.n()
    }
    pub fn d(&self) -> usize {
        self.features.d()
    }
    pub fn d2(&self) -> usize {
        self.d2
    }
    /// Length of the flattened parameter vector.
    pub fn dim(&self) -> usize {
        self.kind.param_dim(self.d(), self.d2)
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn region(&self) -> FeasibleRegion {
        FeasibleRegion::Ball {
            radius: self.radius,
        }
    }
    pub fn w_star(&self) -> &ParamVector {
        &self.w_star
    }
    pub fn f_star(&self) -> f64 {
        self.f_star
    }
    pub fn adjacency(&self) -> &AdjacencyMatrix {
        &self.adjacency
    }
    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }
    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }
    /// Cached product `A X`.
    pub fn ax(&self) -> &DMatrix<f64> {
        &self.ax
    }

    pub(crate) fn check_dim(&self, w: &ParamVector) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok(())
    }

    pub fn objective(&self, w: &ParamVector) -> Result<f64> {
        self.check_dim(w)?;
        let n = self.n() as f64;
        Ok(match self.kind {
            ProblemKind::Convex => (&self.ax * w - &self.y).norm_squared() / (2.0 * n),
            ProblemKind::Nonconvex => {
                let (w1, w2) = split_params(w, self.d(), self.d2);
                let fwd = nonconvex_forward(&self.ax, self.adjacency.entries(), &w1, &w2);
                (fwd.output - &self.y).norm_squared() / (2.0 * n)
            }
        })
    }

    pub fn gradient(&self, w: &ParamVector) -> Result<ParamVector> {
        self.check_dim(w)?;
        Ok(match self.kind {
            ProblemKind::Convex => convex_gradient(&self.ax, &self.y, w),
            ProblemKind::Nonconvex => {
                nonconvex_gradient(&self.ax, self.adjacency.entries(), &self.y, w, self.d(), self.d2)
            }
        })
    }

    /// Curvature constants. For the convex problem both moduli come from
    /// the singular values of `AX`; for the nonconvex problem `l` is absent
    /// and the smoothness constant is [`Self::estimate_smoothness`] with
    /// 10⁴ pairs.
    pub fn curvature_constants(&self, seed: u64) -> Result<CurvatureConstants> {
        match self.kind {
            ProblemKind::Convex => {
                let sv = self.ax.clone().svd(false, false).singular_values;
                let n = self.n() as f64;
                let max = sv.max();
                let rank_tol = max * self.n().max(self.d()) as f64 * f64::EPSILON;
                let min = if sv.len() < self.d() { 0.0 } else { sv.min() };
                let min = if min <= rank_tol { 0.0 } else { min };
                Ok(CurvatureConstants {
                    l: Some(min * min / n),
                    smoothness: max * max / n,
                    g_hat: None,
                })
            }
            ProblemKind::Nonconvex => Ok(CurvatureConstants {
                l: None,
                smoothness: self.estimate_smoothness(10_000, seed)?,
                g_hat: None,
            }),
        }
    }

    /// Empirical Lipschitz constant of the gradient: the largest ratio
    /// `‖∇f(w) − ∇f(u)‖ / ‖w − u‖` over `pairs` random pairs, times 1.5.
    ///
    /// `w` is standard normal (projected into the ball); even-indexed pairs
    /// take `u = w + ξ`, odd ones `u = w + 10⁻³ ξ` to probe local curvature.
    pub fn estimate_smoothness(&self, pairs: usize, seed: u64) -> Result<f64> {
        let region = self.region();
        let max_ratio = (0..pairs)
            .into_par_iter()
            .map(|i| -> Result<f64> {
                let mut rng = stream_rng(derive_seed(seed, i as u64), stream::LIPSCHITZ);
                let w = project(&standard_normal(self.dim(), &mut rng), &region);
                let scale = if i % 2 == 0 { 1.0 } else { 1e-3 };
                let step = standard_normal(self.dim(), &mut rng) * scale;
                let u = project(&(&w + step), &region);
                let gap = (&w - &u).norm();
                if gap == 0.0 {
                    return Ok(0.0);
                }
                Ok((self.gradient(&w)? - self.gradient(&u)?).norm() / gap)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        Ok(1.5 * max_ratio)
    }
}

pub(crate) fn standard_normal<R: rand::Rng>(dim: usize, rng: &mut R) -> ParamVector {
    ParamVector::from_fn(dim, |_, _| StandardNormal.sample(rng))
}

/// Logistic sigmoid, branching on sign so `exp` never overflows.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Split `w = [vec(W1); W2]` (column-major `vec`).
pub fn split_params(w: &ParamVector, d: usize, d2: usize) -> (DMatrix<f64>, DVector<f64>) {
    let w1 = DMatrix::from_column_slice(d, d2, &w.as_slice()[..d * d2]);
    let w2 = DVector::from_column_slice(&w.as_slice()[d * d2..d * d2 + d2]);
    (w1, w2)
}

fn join_params(g1: &DMatrix<f64>, g2: &DVector<f64>) -> ParamVector {
    ParamVector::from_iterator(g1.len() + g2.len(), g1.iter().chain(g2.iter()).copied())
}

/// `Bᵀ (B w − y) / rows(B)`: gradient of `‖B w − y‖² / (2 rows(B))`.
pub(crate) fn convex_gradient(b: &DMatrix<f64>, y: &DVector<f64>, w: &ParamVector) -> ParamVector {
    let residual = b * w - y;
    b.tr_mul(&residual) / b.nrows() as f64
}

pub(crate) struct Forward {
    pub hidden: DMatrix<f64>,
    pub output: DVector<f64>,
}

/// `output = A2 σ(B1 W1) W2`, with `B1` the (possibly sampled and rescaled)
/// aggregated input and `A2` the second aggregation.
pub(crate) fn nonconvex_forward(
    b1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    w2: &DVector<f64>,
) -> Forward {
    let hidden = (b1 * w1).map(sigmoid);
    let output = a2 * (&hidden * w2);
    Forward { hidden, output }
}

/// Gradient of `‖A2 σ(B1 W1) W2 − y‖² / (2 rows(A2))`.
pub(crate) fn nonconvex_gradient(
    b1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &ParamVector,
    d: usize,
    d2: usize,
) -> ParamVector {
    let (w1, w2) = split_params(w, d, d2);
    let fwd = nonconvex_forward(b1, a2, &w1, &w2);
    let residual = fwd.output - y;
    // s = A2ᵀ r / m: sensitivity of the loss to each hidden-layer node
    let s = a2.tr_mul(&residual) / a2.nrows() as f64;
    let g2 = fwd.hidden.tr_mul(&s);
    let mut dz = &s * w2.transpose();
    dz.zip_apply(&fwd.hidden, |g, h| *g *= h * (1.0 - h));
    let g1 = b1.tr_mul(&dz);
    join_params(&g1, &g2)
}
