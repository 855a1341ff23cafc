//! Synthetic instances: Erdős–Rényi adjacency, Gaussian-mixture features and
//! planted ground truths.
//!
//! The graph is undirected with no self-loops. One weight is drawn per
//! unordered pair (before mirroring), uniformly on the open interval
//! `(0, 1/n)`. No further normalisation is applied to the adjacency.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Open01};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::problems::{nonconvex_forward, split_params, ProblemKind};
use crate::rng::{stream, stream_rng};
use crate::{fmt_f64, ParamVector};

/// Dense weighted adjacency matrix, weight 0 meaning "no edge".
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    entries: DMatrix<f64>,
}

impl AdjacencyMatrix {
    /// Wrap an arbitrary square matrix. Only squareness and finiteness are
    /// checked; the generator invariants (symmetry, zero diagonal, weight
    /// range) hold for [`gen_adjacency`] output but are not required here.
    pub fn from_dense(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                context: "adjacency (square)",
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("adjacency", "entries must be finite"));
        }
        Ok(Self { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Number of undirected edges (nonzero strictly-upper entries).
    pub fn edge_count(&self) -> usize {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.entries[(i, j)] != 0.0)
            .count()
    }
}

/// Node features, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn from_dense(rows: DMatrix<f64>) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features", "entries must be finite"));
        }
        Ok(Self { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }
}

/// Two-component Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub t1: f64,
    pub mu1: Vec<f64>,
    /// Diagonal of the first covariance (variances, not standard deviations).
    pub var1: Vec<f64>,
    pub t2: f64,
    pub mu2: Vec<f64>,
    pub var2: Vec<f64>,
}

impl MixtureParams {
    /// `0.3 N(0, diag(1², …, d²)) + 0.7 N(1, diag(2², …, 2²))`.
    pub fn standard(d: usize) -> Self {
        Self {
            t1: 0.3,
            mu1: vec![0.0; d],
            var1: (1..=d).map(|i| (i * i) as f64).collect(),
            t2: 0.7,
            mu2: vec![1.0; d],
            var2: vec![4.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, len) in [
            ("mixture.var1", self.var1.len()),
            ("mixture.mu2", self.mu2.len()),
            ("mixture.var2", self.var2.len()),
        ] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: d,
                    got: len,
                });
            }
        }
        if !(self.t1 >= 0.0 && self.t2 >= 0.0) || (self.t1 + self.t2 - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "mixture weights",
                format!("need t1, t2 >= 0 and t1 + t2 = 1, got {} and {}", self.t1, self.t2),
            ));
        }
        if self
            .var1
            .iter()
            .chain(&self.var2)
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid("mixture variances", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Planted optimum and the targets it generates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w_star: ParamVector,
    pub y: DVector<f64>,
    /// Optimal objective value; zero by construction.
    pub f_star: f64,
}

/// Sample `G(n, p)` with i.i.d. edge weights uniform on `(0, 1/n)`.
///
/// Pairs `(i, j)`, `i < j`, are visited in row-major order; each consumes one
/// uniform for the edge decision and, if an edge, one open-interval uniform
/// for its weight.
pub fn gen_adjacency(n: usize, p: f64, seed: u64) -> Result<AdjacencyMatrix> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one node"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid("p", format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = stream_rng(seed, stream::GRAPH);
    let cap = 1.0 / n as f64;
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let u: f64 = rng.random();
            if u < p {
                let w = loop {
                    let x: f64 = Open01.sample(&mut rng);
                    let w = x / n as f64;
                    if w < cap {
                        break w;
                    }
                };
                entries[(i, j)] = w;
                entries[(j, i)] = w;
            }
        }
    }
    Ok(AdjacencyMatrix { entries })
}

/// Draw `n` feature rows from the mixture. Per row: one uniform picks the
/// component (first if `u < t1`), then `d` standard normals.
pub fn gen_features(n: usize, mixture: &MixtureParams, seed: u64) -> Result<FeatureMatrix> {
    mixture.validate()?;
    let d = mixture.dim();
    let sd1: Vec<f64> = mixture.var1.iter().map(|v| v.sqrt()).collect();
    let sd2: Vec<f64> = mixture.var2.iter().map(|v| v.sqrt()).collect();
    let mut rng = stream_rng(seed, stream::FEATURES);
    let mut rows = DMatrix::zeros(n, d);
    for i in 0..n {
        let u: f64 = rng.random();
        let (mu, sd) = if u < mixture.t1 {
            (&mixture.mu1, &sd1)
        } else {
            (&mixture.mu2, &sd2)
        };
        for c in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            rows[(i, c)] = mu[c] + sd[c] * z;
        }
    }
    Ok(FeatureMatrix { rows })
}

/// Plant a standard-normal optimum and compute the noiseless targets.
///
/// Convex: `y = A X w*`. Nonconvex: `y = A σ(A X W1*) W2*`, with
/// `W1* ∈ R^{d×d2}` and `W2* ∈ R^{d2}` flattened into `w*`.
pub fn gen_ground_truth(
    kind: ProblemKind,
    adjacency: &AdjacencyMatrix,
    features: &FeatureMatrix,
    d2: usize,
    seed: u64,
) -> Result<GroundTruth> {
    let n = adjacency.n();
    if features.n() != n {
        return Err(Error::DimensionMismatch {
            context: "features rows vs adjacency",
            expected: n,
            got: features.n(),
        });
    }
    let d = features.d();
    let dim = kind.param_dim(d, d2);
    if dim == 0 {
        return Err(Error::invalid("d2", "hidden width must be positive"));
    }
    let mut rng = stream_rng(seed, stream::TRUTH);
    let w_star = ParamVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
    let ax = adjacency.entries() * features.rows();
    let y = match kind {
        ProblemKind::Convex => &ax * &w_star,
        ProblemKind::Nonconvex => {
            let (w1, w2) = split_params(&w_star, d, d2);
            nonconvex_forward(&ax, adjacency.entries(), &w1, &w2).output
        }
    };
    Ok(GroundTruth {
        w_star,
        y,
        f_star: 0.0,
    })
}

fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Dump `A.csv`, `X.csv`, `w_star.csv` and `y.csv` into `dir`
/// (row-major, one matrix row per line, 17 significant digits; vectors are
/// written as single columns).
pub fn write_dataset_csv(
    dir: &Path,
    adjacency: &AdjacencyMatrix,
    features: &FeatureMatrix,
    truth: &GroundTruth,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("A.csv"), adjacency.entries())?;
    write_matrix(&dir.join("X.csv"), features.rows())?;
    let w = DMatrix::from_column_slice(truth.w_star.len(), 1, truth.w_star.as_slice());
    write_matrix(&dir.join("w_star.csv"), &w)?;
    let y = DMatrix::from_column_slice(truth.y.len(), 1, truth.y.as_slice());
    write_matrix(&dir.join("y.csv"), &y)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_invariants_at_default_size() {
        let a = gen_adjacency(300, 0.3, 11).unwrap();
        let m = a.entries();
        let cap = 1.0 / 300.0;
        for i in 0..300 {
            assert_eq!(m[(i, i)], 0.0);
            for j in 0..300 {
                assert_eq!(m[(i, j)], m[(j, i)]);
                let v = m[(i, j)];
                assert!(v == 0.0 || (v > 0.0 && v < cap));
            }
        }
    }

    #[test]
    fn adjacency_extreme_probabilities() {
        let empty = gen_adjacency(5, 0.0, 3).unwrap();
        assert!(empty.entries().iter().all(|&v| v == 0.0));
        let full = gen_adjacency(5, 1.0, 3).unwrap();
        assert_eq!(full.edge_count(), 10);
        assert_eq!(full.entries(), &full.entries().transpose());
    }

    #[test]
    fn adjacency_rejects_bad_probability() {
        assert!(gen_adjacency(5, 1.5, 0).is_err());
        assert!(gen_adjacency(5, -0.1, 0).is_err());
        assert!(gen_adjacency(5, f64::NAN, 0).is_err());
    }

    #[test]
    fn edge_count_matches_binomial_over_seeds() {
        let (n, p) = (300usize, 0.3);
        let pairs = (n * (n - 1) / 2) as f64;
        let seeds = 100;
        let total: usize = (0..seeds)
            .map(|s| gen_adjacency(n, p, s).unwrap().edge_count())
            .sum();
        let mean = total as f64 / seeds as f64;
        // standard error of the mean of `seeds` binomial counts
        let se = (pairs * p * (1.0 - p) / seeds as f64).sqrt();
        assert!((mean - p * pairs).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn adjacency_is_deterministic() {
        assert_eq!(gen_adjacency(40, 0.3, 9).unwrap(), gen_adjacency(40, 0.3, 9).unwrap());
        assert_ne!(gen_adjacency(40, 0.3, 9).unwrap(), gen_adjacency(40, 0.3, 10).unwrap());
    }

    #[test]
    fn feature_mean_matches_mixture() {
        let n = 10_000;
        let mix = MixtureParams::standard(10);
        let x = gen_features(n, &mix, 5).unwrap();
        for c in 0..10 {
            let col = x.rows().column(c);
            let mean = col.mean();
            // mixture variance: sum t_i (var_i + mu_i^2) - mean^2
            let m = 0.7;
            let second = 0.3 * ((c + 1) * (c + 1)) as f64 + 0.7 * (4.0 + 1.0);
            let se = ((second - m * m) / n as f64).sqrt();
            assert!((mean - m).abs() <= 5.0 * se, "coord {c}: {mean}");
        }
    }

    #[test]
    fn degenerate_mixture_uses_first_component() {
        let mut mix = MixtureParams::standard(3);
        mix.t1 = 1.0;
        mix.t2 = 0.0;
        mix.mu1 = vec![100.0; 3];
        mix.var1 = vec![1e-6; 3];
        let x = gen_features(50, &mix, 1).unwrap();
        assert!(x.rows().iter().all(|v| (v - 100.0).abs() < 0.1));
    }

    #[test]
    fn mixture_validation() {
        let mut mix = MixtureParams::standard(3);
        mix.var2[1] = 0.0;
        assert!(gen_features(4, &mix, 0).is_err());
        let mut mix = MixtureParams::standard(3);
        mix.t1 = 0.5;
        assert!(gen_features(4, &mix, 0).is_err());
    }

    #[test]
    fn ground_truth_shapes_and_zero_graph() {
        let a = gen_adjacency(20, 0.3, 1).unwrap();
        let x = gen_features(20, &MixtureParams::standard(10), 1).unwrap();
        let t = gen_ground_truth(ProblemKind::Nonconvex, &a, &x, 5, 1).unwrap();
        assert_eq!(t.w_star.len(), 10 * 5 + 5);
        assert_eq!(t.y.len(), 20);
        let zero = AdjacencyMatrix::from_dense(DMatrix::zeros(20, 20)).unwrap();
        let t = gen_ground_truth(ProblemKind::Convex, &zero, &x, 5, 1).unwrap();
        assert!(t.y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ground_truth_rejects_mismatch() {
        let a = gen_adjacency(20, 0.3, 1).unwrap();
        let x = gen_features(19, &MixtureParams::standard(10), 1).unwrap();
        assert!(gen_ground_truth(ProblemKind::Convex, &a, &x, 5, 1).is_err());
    }

    #[test]
    fn dataset_dump_round_trips_values() {
        let dir = tempfile::tempdir().unwrap();
        let a = gen_adjacency(6, 0.5, 2).unwrap();
        let x = gen_features(6, &MixtureParams::standard(3), 2).unwrap();
        let t = gen_ground_truth(ProblemKind::Convex, &a, &x, 1, 2).unwrap();
        write_dataset_csv(dir.path(), &a, &x, &t).unwrap();
        let text = fs::read_to_string(dir.path().join("X.csv")).unwrap();
        let first: Vec<f64> = text
            .lines()
            .next()
            .unwrap()
            .split(',')
            .map(|s| s.parse().unwrap())
            .collect();
        for (c, v) in first.iter().enumerate().take(3) {
            assert_eq!(*v, x.rows()[(0, c)]);
        }
        assert_eq!(fs::read_to_string(dir.path().join("y.csv")).unwrap().lines().count(), 6);
    }
}
