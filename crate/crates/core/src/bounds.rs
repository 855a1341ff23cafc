//! Closed-form convergence bounds and the sample-size condition.
//!
//! The high-probability formulas are written so that `ρ = δ = 0` reduces
//! them to their expectation counterparts bit for bit: every factor that
//! vanishes appears as an additive `0` or a multiplicative `1`.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TheoremId {
    /// `‖w_k − w*‖² ≤ G² / (l² k)`, `k ≥ 3`.
    T2Iterate,
    /// `f(w̄_k) − f* ≤ G² (1 + log k) / (2 l k)`.
    T2Average,
    /// `f(w_k) − f* ≤ L G² / (2 l² k)`, `k ≥ 3`.
    T3Smooth,
    /// Convex with `γ_k = c/√k` on a region of diameter `D`.
    T4Convex,
    /// Nonconvex, `min_k ‖∇f(w_k)‖² ≤ L G D_f / √T`.
    T5Nonconvex,
    T10Iterate,
    T10Average,
    T11Smooth,
    T12Convex,
    T13Nonconvex,
}

impl TheoremId {
    pub const ALL: [TheoremId; 10] = [
        TheoremId::T2Iterate,
        TheoremId::T2Average,
        TheoremId::T3Smooth,
        TheoremId::T4Convex,
        TheoremId::T5Nonconvex,
        TheoremId::T10Iterate,
        TheoremId::T10Average,
        TheoremId::T11Smooth,
        TheoremId::T12Convex,
        TheoremId::T13Nonconvex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TheoremId::T2Iterate => "T2_iterate",
            TheoremId::T2Average => "T2_average",
            TheoremId::T3Smooth => "T3_smooth",
            TheoremId::T4Convex => "T4_convex",
            TheoremId::T5Nonconvex => "T5_nonconvex",
            TheoremId::T10Iterate => "T10_iterate",
            TheoremId::T10Average => "T10_average",
            TheoremId::T11Smooth => "T11_smooth",
            TheoremId::T12Convex => "T12_convex",
            TheoremId::T13Nonconvex => "T13_nonconvex",
        }
    }

    /// Smallest admissible `k`.
    pub fn min_k(self) -> usize {
        match self {
            TheoremId::T2Iterate
            | TheoremId::T3Smooth
            | TheoremId::T10Iterate
            | TheoremId::T10Average
            | TheoremId::T11Smooth => 3,
            _ => 1,
        }
    }

    /// True when the bound is stated only at the horizon `T` rather than for
    /// every `k`.
    pub fn horizon_only(self) -> bool {
        matches!(
            self,
            TheoremId::T5Nonconvex
                | TheoremId::T10Iterate
                | TheoremId::T10Average
                | TheoremId::T11Smooth
                | TheoremId::T12Convex
                | TheoremId::T13Nonconvex
        )
    }

    /// Expectation-form counterpart of a high-probability bound.
    pub fn unbiased_counterpart(self) -> Option<TheoremId> {
        match self {
            TheoremId::T10Iterate => Some(TheoremId::T2Iterate),
            TheoremId::T10Average => Some(TheoremId::T2Average),
            TheoremId::T11Smooth => Some(TheoremId::T3Smooth),
            TheoremId::T12Convex => Some(TheoremId::T4Convex),
            TheoremId::T13Nonconvex => Some(TheoremId::T5Nonconvex),
            _ => None,
        }
    }

    /// Constants the formula reads.
    pub fn required_constants(self) -> &'static [&'static str] {
        match self {
            TheoremId::T2Iterate | TheoremId::T2Average => &["G", "l"],
            TheoremId::T3Smooth => &["G", "l", "L"],
            TheoremId::T4Convex => &["G", "D", "c"],
            TheoremId::T5Nonconvex => &["G", "L", "D_f"],
            TheoremId::T10Iterate | TheoremId::T10Average => &["G", "l", "rho"],
            TheoremId::T11Smooth => &["G", "l", "L", "rho"],
            TheoremId::T12Convex => &["G", "D", "c", "rho"],
            TheoremId::T13Nonconvex => &["G", "L", "D_f", "delta"],
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TheoremId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TheoremId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("theorem", format!("unknown theorem `{s}`")))
    }
}

/// Constants entering the bounds; absent ones are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoundConstants {
    pub g: Option<f64>,
    pub l: Option<f64>,
    pub big_l: Option<f64>,
    /// Diameter of the feasible region.
    pub d: Option<f64>,
    pub c: Option<f64>,
    pub d_f: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub horizon: Option<usize>,
}

impl BoundConstants {
    /// `(name, value)` for every constant that is set, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("G", self.g),
            ("l", self.l),
            ("L", self.big_l),
            ("D", self.d),
            ("c", self.c),
            ("D_f", self.d_f),
            ("rho", self.rho),
            ("delta", self.delta),
            ("T", self.horizon.map(|t| t as f64)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

fn need(v: Option<f64>, constant: &'static str, theorem: TheoremId) -> Result<f64> {
    let v = v.ok_or(Error::MissingConstant {
        constant,
        theorem: theorem.name(),
    })?;
    if !v.is_finite() {
        return Err(Error::invalid(constant, format!("must be finite, got {v}")));
    }
    Ok(v)
}

fn need_positive(v: Option<f64>, constant: &'static str, theorem: TheoremId) -> Result<f64> {
    let v = need(v, constant, theorem)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(constant, format!("must be positive, got {v}")))
    }
}

fn need_nonnegative(v: Option<f64>, constant: &'static str, theorem: TheoremId) -> Result<f64> {
    let v = need(v, constant, theorem)?;
    if v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::invalid(constant, format!("must be nonnegative, got {v}")))
    }
}

/// Right-hand side of `theorem` at iteration `k`; for horizon-only bounds
/// `k` is the horizon `T`.
pub fn bound_value(theorem: TheoremId, consts: &BoundConstants, k: usize) -> Result<f64> {
    if k < theorem.min_k() {
        return Err(Error::BelowValidity {
            theorem: theorem.name(),
            min: theorem.min_k(),
            k,
        });
    }
    let kf = k as f64;
    let c = consts;
    let t = theorem;
    Ok(match theorem {
        TheoremId::T2Iterate => {
            let g = need_positive(c.g, "G", t)?;
            let l = need_positive(c.l, "l", t)?;
            t2_iterate(g, l, kf)
        }
        TheoremId::T2Average => {
            let g = need_positive(c.g, "G", t)?;
            let l = need_positive(c.l, "l", t)?;
            (g * g * (1.0 + kf.ln()) / (2.0 * kf)) * (1.0 / l)
        }
        TheoremId::T3Smooth => {
            let g = need_positive(c.g, "G", t)?;
            let l = need_positive(c.l, "l", t)?;
            let big_l = need_positive(c.big_l, "L", t)?;
            (big_l / 2.0) * t2_iterate(g, l, kf)
        }
        TheoremId::T4Convex => {
            let g = need_positive(c.g, "G", t)?;
            let d = need_positive(c.d, "D", t)?;
            let step = need_positive(c.c, "c", t)?;
            (1.0 / (2.0 * kf.sqrt())) * ((1.0 / step) * d * d + g * g * (step * (1.0 + 1.0 / kf).sqrt()))
        }
        TheoremId::T5Nonconvex => {
            let g = need_positive(c.g, "G", t)?;
            let big_l = need_positive(c.big_l, "L", t)?;
            let d_f = need_nonnegative(c.d_f, "D_f", t)?;
            (big_l * g * d_f) / kf.sqrt()
        }
        TheoremId::T10Iterate => {
            let g = need_positive(c.g, "G", t)?;
            let (l, rho) = strongly_convex_rho(c, t)?;
            t10_iterate(g, l, rho, kf)
        }
        TheoremId::T10Average => {
            let g = need_positive(c.g, "G", t)?;
            let (l, rho) = strongly_convex_rho(c, t)?;
            let log_term = 1.0 + kf.ln();
            let lr = l - rho / kf;
            let grow = 1.0 + rho / kf;
            (g * g * log_term / (2.0 * kf)) * (rho / log_term + grow * grow / lr)
        }
        TheoremId::T11Smooth => {
            let g = need_positive(c.g, "G", t)?;
            let big_l = need_positive(c.big_l, "L", t)?;
            let (l, rho) = strongly_convex_rho(c, t)?;
            (big_l / 2.0) * t10_iterate(g, l, rho, kf)
        }
        TheoremId::T12Convex => {
            let g = need_positive(c.g, "G", t)?;
            let d = need_positive(c.d, "D", t)?;
            let step = need_positive(c.c, "c", t)?;
            let rho = need_nonnegative(c.rho, "rho", t)?;
            let sq = kf.sqrt();
            let grow = 1.0 + rho / sq;
            (1.0 / (2.0 * sq))
                * ((1.0 / step + rho) * d * d
                    + g * g * (rho + (step * (grow * grow)) * (1.0 + 1.0 / kf).sqrt()))
        }
        TheoremId::T13Nonconvex => {
            let g = need_positive(c.g, "G", t)?;
            let big_l = need_positive(c.big_l, "L", t)?;
            let d_f = need_nonnegative(c.d_f, "D_f", t)?;
            let delta = need_nonnegative(c.delta, "delta", t)?;
            if delta >= 1.0 {
                return Err(Error::invalid("delta", format!("{delta} outside [0, 1)")));
            }
            ((1.0 + delta) * big_l * g * d_f) / ((1.0 - delta) * kf.sqrt())
        }
    })
}

fn t2_iterate(g: f64, l: f64, k: f64) -> f64 {
    (g * g / k) * (1.0 / (l * l))
}

fn t10_iterate(g: f64, l: f64, rho: f64, t: f64) -> f64 {
    let grow = 1.0 + rho / t;
    let lr = l - rho / t;
    (g * g / t) * ((grow * grow + rho * lr) / (lr * lr))
}

fn strongly_convex_rho(c: &BoundConstants, t: TheoremId) -> Result<(f64, f64)> {
    let l = need_positive(c.l, "l", t)?;
    let rho = need_nonnegative(c.rho, "rho", t)?;
    if rho >= l {
        return Err(Error::invalid("rho", format!("need rho < l, got rho = {rho}, l = {l}")));
    }
    Ok((l, rho))
}

/// `D_f = √(2 (f(w_1) − f*) / L)`.
pub fn d_f(f_w1: f64, f_star: f64, big_l: f64) -> Result<f64> {
    if !(big_l > 0.0) || !big_l.is_finite() {
        return Err(Error::invalid("L", format!("must be positive, got {big_l}")));
    }
    let gap = f_w1 - f_star;
    if !(gap >= 0.0) {
        return Err(Error::invalid("f_w1", format!("objective gap {gap} is negative")));
    }
    Ok((2.0 * gap / big_l).sqrt())
}

/// Smallest `N` with `T C exp(−N τ) ≤ ε`, i.e. `⌈log(T C / ε) / τ⌉`, at
/// least 1.
pub fn required_sample_size(tau: f64, horizon: usize, c: f64, epsilon: f64) -> Result<usize> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid("tau", format!("must be positive, got {tau}")));
    }
    if horizon == 0 {
        return Err(Error::invalid("T", "horizon must be at least 1"));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::invalid("C", format!("must be positive, got {c}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", format!("{epsilon} outside (0, 1)")));
    }
    let n = ((horizon as f64 * c / epsilon).ln() / tau).ceil();
    Ok(if n < 1.0 { 1 } else { n as usize })
}

/// [`required_sample_size`] clamped to a graph with `n` nodes.
pub fn required_layer_size(tau: f64, horizon: usize, c: f64, epsilon: f64, n: usize) -> Result<usize> {
    Ok(required_sample_size(tau, horizon, c, epsilon)?.clamp(1, n.max(1)))
}

/// Bound as a function of `k`, or a single value at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub theorem: TheoremId,
    pub points: Vec<(usize, f64)>,
}

impl BoundCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "k,value,theorem")?;
        for (k, v) in &self.points {
            writeln!(out, "{k},{},{}", fmt_f64(*v), self.theorem)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("k,value,theorem") {
            return Err(Error::Parse("expected header `k,value,theorem`".into()));
        }
        let mut theorem = None;
        let mut points = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Parse(format!("bound csv line {}", i + 2));
            let mut f = line.split(',');
            let k = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let v = f.next().and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
            let t: TheoremId = f.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if theorem.is_some_and(|p| p != t) {
                return Err(Error::Parse("mixed theorems in one bound csv".into()));
            }
            theorem = Some(t);
            points.push((k, v));
        }
        let theorem = theorem.ok_or(Error::EmptyPlot("bound csv has no rows"))?;
        Ok(Self { theorem, points })
    }
}

/// Evaluate `theorem` for every valid `k ≤ k_max`; horizon-only theorems
/// give one point at `consts.horizon` (or `k_max` when unset).
pub fn bound_curve(theorem: TheoremId, consts: &BoundConstants, k_max: usize) -> Result<BoundCurve> {
    let points = if theorem.horizon_only() {
        let t = consts.horizon.unwrap_or(k_max);
        vec![(t, bound_value(theorem, consts, t)?)]
    } else {
        (theorem.min_k()..=k_max)
            .map(|k| Ok((k, bound_value(theorem, consts, k)?)))
            .collect::<Result<Vec<_>>>()?
    };
    if points.is_empty() {
        return Err(Error::BelowValidity {
            theorem: theorem.name(),
            min: theorem.min_k(),
            k: k_max,
        });
    }
    Ok(BoundCurve { theorem, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full(g: f64, l: f64, big_l: f64, d: f64, c: f64, d_f: f64) -> BoundConstants {
        BoundConstants {
            g: Some(g),
            l: Some(l),
            big_l: Some(big_l),
            d: Some(d),
            c: Some(c),
            d_f: Some(d_f),
            rho: Some(0.0),
            delta: Some(0.0),
            horizon: None,
        }
    }

    #[test]
    fn substitution_examples() {
        let c = full(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(bound_value(TheoremId::T2Iterate, &c, 4).unwrap(), 0.25);
        let t4 = bound_value(TheoremId::T4Convex, &c, 1).unwrap();
        assert!((t4 - 0.5 * (1.0 + 2f64.sqrt())).abs() < 1e-15);
        assert!((t4 - 1.20711).abs() < 1e-5);
        let t5 = bound_value(TheoremId::T5Nonconvex, &full(2.0, 1.0, 3.0, 1.0, 1.0, 0.5), 9).unwrap();
        assert_eq!(t5, 1.0);
    }

    #[test]
    fn average_bound_matches_direct_formula() {
        let c = full(3.0, 0.5, 1.0, 1.0, 1.0, 1.0);
        for k in [1usize, 2, 10, 777] {
            let kf = k as f64;
            let want = 9.0 * (1.0 + kf.ln()) / (2.0 * 0.5 * kf);
            let got = bound_value(TheoremId::T2Average, &c, k).unwrap();
            assert!((got - want).abs() <= 1e-14 * want);
        }
    }

    #[test]
    fn high_probability_formulas_match_direct_evaluation() {
        let (g, l, big_l, d, step, t) = (1.7, 0.9, 2.5, 4.0, 0.3, 50.0);
        let rho = 0.4;
        let c = BoundConstants {
            rho: Some(rho),
            delta: Some(0.2),
            ..full(g, l, big_l, d, step, 1.1)
        };
        let lr = l - rho / t;
        let iter = g * g / t * ((1.0 + rho / t).powi(2) + rho * lr) / lr.powi(2);
        let avg = g * g * (1.0 + t.ln()) / (2.0 * t) * (rho / (1.0 + t.ln()) + (1.0 + rho / t).powi(2) / lr);
        let conv = 1.0 / (2.0 * t.sqrt())
            * ((1.0 / step + rho) * d * d
                + g * g * (rho + step * (1.0 + rho / t.sqrt()).powi(2) * (1.0 + 1.0 / t).sqrt()));
        let nonc = 1.2 * big_l * g * 1.1 / (0.8 * t.sqrt());
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        assert!(rel(bound_value(TheoremId::T10Iterate, &c, 50).unwrap(), iter) < 1e-14);
        assert!(rel(bound_value(TheoremId::T10Average, &c, 50).unwrap(), avg) < 1e-14);
        assert!(rel(bound_value(TheoremId::T11Smooth, &c, 50).unwrap(), big_l / 2.0 * iter) < 1e-14);
        assert!(rel(bound_value(TheoremId::T12Convex, &c, 50).unwrap(), conv) < 1e-14);
        assert!(rel(bound_value(TheoremId::T13Nonconvex, &c, 50).unwrap(), nonc) < 1e-14);
    }

    proptest! {
        #[test]
        fn zero_factors_reduce_bitwise(
            g in 1e-3f64..1e3,
            l in 1e-4f64..10.0,
            big_l in 1e-3f64..1e3,
            d in 1e-2f64..1e4,
            c in 1e-3f64..1e2,
            d_f in 0.0f64..1e3,
            t in 3usize..100_000,
        ) {
            let consts = full(g, l, big_l, d, c, d_f);
            for theorem in TheoremId::ALL {
                if let Some(base) = theorem.unbiased_counterpart() {
                    let a = bound_value(theorem, &consts, t).unwrap();
                    let b = bound_value(base, &consts, t).unwrap();
                    prop_assert_eq!(a.to_bits(), b.to_bits(), "{} vs {}", theorem, base);
                }
            }
        }

        #[test]
        fn smooth_bound_is_scaled_iterate_bound(g in 1e-3f64..1e3, l in 1e-4f64..10.0, big_l in 1e-3f64..1e3, k in 3usize..10_000) {
            let consts = full(g, l, big_l, 1.0, 1.0, 1.0);
            let t3 = bound_value(TheoremId::T3Smooth, &consts, k).unwrap();
            let t2 = bound_value(TheoremId::T2Iterate, &consts, k).unwrap();
            prop_assert_eq!(t3.to_bits(), ((big_l / 2.0) * t2).to_bits());
        }

        #[test]
        fn curves_positive_and_iterate_bounds_nonincreasing(g in 1e-2f64..1e2, l in 1e-3f64..1.0, big_l in 1e-2f64..1e2) {
            let consts = full(g, l, big_l, 10.0, 1.0, 1.0);
            for theorem in [TheoremId::T2Iterate, TheoremId::T3Smooth] {
                let curve = bound_curve(theorem, &consts, 200).unwrap();
                prop_assert!(curve.points.iter().all(|(_, v)| *v > 0.0 && v.is_finite()));
                for w in curve.points.windows(2) {
                    prop_assert!(w[1].1 <= w[0].1);
                }
            }
        }

        #[test]
        fn sample_size_grows_logarithmically(tau in 1e-3f64..10.0, t in 1usize..1_000_000, c in 1e-2f64..1e2, eps in 1e-4f64..0.99) {
            let n1 = required_sample_size(tau, t, c, eps).unwrap();
            let n2 = required_sample_size(tau, 2 * t, c, eps).unwrap();
            prop_assert!(n2 >= n1);
            prop_assert!(n2 - n1 <= (2f64.ln() / tau).ceil() as usize);
        }
    }

    #[test]
    fn validity_thresholds_and_missing_constants() {
        let c = full(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            bound_value(TheoremId::T2Iterate, &c, 2),
            Err(Error::BelowValidity { min: 3, .. })
        ));
        assert!(bound_value(TheoremId::T2Average, &c, 1).is_ok());
        let missing = BoundConstants::default();
        assert!(matches!(
            bound_value(TheoremId::T4Convex, &missing, 5),
            Err(Error::MissingConstant { .. })
        ));
        let bad_rho = BoundConstants { rho: Some(2.0), ..c };
        assert!(bound_value(TheoremId::T10Iterate, &bad_rho, 10).is_err());
        let bad_delta = BoundConstants { delta: Some(1.0), ..c };
        assert!(bound_value(TheoremId::T13Nonconvex, &bad_delta, 10).is_err());
    }

    #[test]
    fn d_f_examples() {
        assert_eq!(d_f(3.0, 3.0, 1.0).unwrap(), 0.0);
        assert_eq!(d_f(1.0, 0.0, 2.0).unwrap(), 1.0);
        assert!(d_f(0.0, 1.0, 1.0).is_err());
        assert!(d_f(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(required_sample_size(1.0, 10, 1.0, 0.1).unwrap(), 5);
        assert_eq!(required_sample_size(100.0, 1, 1.0, 0.5).unwrap(), 1);
        assert!(required_sample_size(0.0, 10, 1.0, 0.1).is_err());
        assert!(required_sample_size(1.0, 10, 1.0, 1.0).is_err());
        assert_eq!(required_layer_size(1e-3, 10, 1.0, 0.1, 300).unwrap(), 300);
    }

    #[test]
    fn horizon_curves_have_one_point() {
        let c = BoundConstants {
            horizon: Some(3000),
            ..full(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
        };
        let curve = bound_curve(TheoremId::T13Nonconvex, &c, 10).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].0, 3000);
        assert_eq!(bound_curve(TheoremId::T2Iterate, &c, 10).unwrap().points.len(), 8);
    }

    #[test]
    fn theorem_names_round_trip() {
        for t in TheoremId::ALL {
            assert_eq!(t.name().parse::<TheoremId>().unwrap(), t);
        }
        assert!("T99".parse::<TheoremId>().is_err());
    }

    #[test]
    fn curve_csv() {
        let c = full(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let curve = bound_curve(TheoremId::T2Iterate, &c, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        curve.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,value,theorem");
        assert_eq!(lines[2], format!("4,{},T2_iterate", fmt_f64(0.25)));
        assert_eq!(BoundCurve::read_csv(&path).unwrap(), curve);
    }
}
