//! Log-log slope fits of trace metrics.

use crate::error::{Error, Result};
use crate::estimators::least_squares;
use crate::optimizer::{Metric, TraceRow};

/// Values below this are treated as numerical roundoff and excluded.
pub const ROUNDOFF_FLOOR: f64 = 1e-24;
/// Fewer usable points than this in the window is an error.
pub const MIN_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub metric: Metric,
    pub k_lo: usize,
    pub k_hi: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub target_slope: f64,
    pub passed: bool,
    /// Points entering the fit.
    pub used: usize,
    /// Window rows left out (non-positive, non-finite, or at the floor).
    pub excluded: usize,
    /// First `k` in the window where the metric reached the roundoff floor;
    /// that row and all later ones are excluded.
    pub floor_cutoff: Option<usize>,
}

impl RateReport {
    pub fn verdict(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }
}

/// Fit `log(metric) = slope · log(k) + intercept` over rows with
/// `k_lo ≤ k ≤ k_hi`; passes iff `slope ≤ target_slope`.
pub fn check_rate(
    rows: &[TraceRow],
    metric: Metric,
    target_slope: f64,
    window: (usize, usize),
) -> Result<RateReport> {
    let (k_lo, k_hi) = window;
    let last = rows.last().ok_or(Error::InsufficientPoints {
        required: MIN_POINTS,
        found: 0,
    })?;
    if !(k_lo >= 1 && k_lo < k_hi && k_hi <= last.k) {
        return Err(Error::invalid(
            "window",
            format!("need 1 ≤ k_lo < k_hi ≤ {}, got [{k_lo}, {k_hi}]", last.k),
        ));
    }
    let in_window: Vec<&TraceRow> = rows.iter().filter(|r| r.k >= k_lo && r.k <= k_hi).collect();
    let floor_cutoff = in_window
        .iter()
        .find(|r| metric.of(r) < ROUNDOFF_FLOOR)
        .map(|r| r.k);
    let points: Vec<(f64, f64)> = in_window
        .iter()
        .filter(|r| floor_cutoff.is_none_or(|c| r.k < c))
        .map(|r| (r.k, metric.of(r)))
        .filter(|(_, v)| v.is_finite() && *v > 0.0)
        .map(|(k, v)| ((k as f64).ln(), v.ln()))
        .collect();
    if points.len() < MIN_POINTS {
        return Err(Error::InsufficientPoints {
            required: MIN_POINTS,
            found: points.len(),
        });
    }
    let (slope, intercept) = least_squares(&points).ok_or(Error::InsufficientPoints {
        required: MIN_POINTS,
        found: points.len(),
    })?;
    Ok(RateReport {
        metric,
        k_lo,
        k_hi,
        slope,
        intercept,
        r_squared: r_squared(&points, slope, intercept),
        target_slope,
        passed: slope.is_finite() && slope <= target_slope,
        used: points.len(),
        excluded: in_window.len() - points.len(),
        floor_cutoff,
    })
}

fn r_squared(points: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    let m = points.len() as f64;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let e = p.1 - (slope * p.0 + intercept);
            e * e
        })
        .sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}
