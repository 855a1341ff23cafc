//! Dependency-free SVG rendering of trace metrics and bound curves on
//! log-log axes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bounds::BoundCurve;
use crate::error::{Error, Result};
use crate::optimizer::{Metric, TraceRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl PlotSeries {
    pub fn from_trace(rows: &[TraceRow], metric: Metric) -> Self {
        Self {
            label: metric_label(metric).to_string(),
            points: rows.iter().map(|r| (r.k as f64, metric.of(r))).collect(),
            dashed: false,
        }
    }

    pub fn from_bound(curve: &BoundCurve) -> Self {
        Self {
            label: format!("bound {}", curve.theorem),
            points: curve.points.iter().map(|(k, v)| (*k as f64, *v)).collect(),
            dashed: true,
        }
    }
}

/// Legend text for the four figure metrics.
pub fn metric_label(metric: Metric) -> &'static str {
    match metric {
        Metric::DistSq => "‖w_k − w*‖²",
        Metric::AvgGap => "f(w̄_k) − f*",
        Metric::FGap => "f(w_k) − f*",
        Metric::GradNormSq => "‖∇f(w_k)‖²",
        Metric::MinGradNormSq => "min_{i≤k} ‖∇f(w_i)‖²",
    }
}

/// Reference rate `C₀ k^slope`, drawn dashed black through `(1, C₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLine {
    pub c0: f64,
    pub slope: f64,
}

impl ReferenceLine {
    pub fn value_at(&self, k: f64) -> f64 {
        self.c0 * k.powf(self.slope)
    }

    fn label(&self) -> String {
        if self.slope == -1.0 {
            "O(1/k)".to_string()
        } else if self.slope == -0.5 {
            "O(1/√k)".to_string()
        } else {
            format!("O(k^{})", self.slope)
        }
    }
}

/// Log-log mapping between data and pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Axes {
    fn fit(series: &[PlotSeries], reference: Option<&ReferenceLine>) -> Result<Self> {
        let pts = || series.iter().flat_map(|s| s.points.iter()).filter(usable);
        if pts().next().is_none() {
            return Err(Error::EmptyPlot("no positive finite points"));
        }
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts() {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        x_min = x_min.min(1.0);
        if let Some(r) = reference {
            for x in [x_min, x_max] {
                let v = r.value_at(x);
                if v.is_finite() && v > 0.0 {
                    y_min = y_min.min(v);
                    y_max = y_max.max(v);
                }
            }
        }
        let widen = |lo: f64, hi: f64| {
            let (a, b) = (lo.log10().floor(), hi.log10().ceil());
            if a == b {
                (10f64.powf(a - 1.0), 10f64.powf(b + 1.0))
            } else {
                (10f64.powf(a), 10f64.powf(b))
            }
        };
        let (x_min, x_max) = widen(x_min, x_max);
        let (y_min, y_max) = widen(y_min, y_max);
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = (x.log10() - self.x_min.log10()) / (self.x_max.log10() - self.x_min.log10());
        let fy = (y.log10() - self.y_min.log10()) / (self.y_max.log10() - self.y_min.log10());
        (
            LEFT + fx * (WIDTH - LEFT - RIGHT),
            HEIGHT - BOTTOM - fy * (HEIGHT - TOP - BOTTOM),
        )
    }

    pub fn from_px(&self, px: f64, py: f64) -> (f64, f64) {
        let fx = (px - LEFT) / (WIDTH - LEFT - RIGHT);
        let fy = (HEIGHT - BOTTOM - py) / (HEIGHT - TOP - BOTTOM);
        let lx = self.x_min.log10() + fx * (self.x_max.log10() - self.x_min.log10());
        let ly = self.y_min.log10() + fy * (self.y_max.log10() - self.y_min.log10());
        (10f64.powf(lx), 10f64.powf(ly))
    }
}

fn usable(p: &&(f64, f64)) -> bool {
    p.0 > 0.0 && p.1 > 0.0 && p.0.is_finite() && p.1.is_finite()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render the plot; every series becomes one `<polyline>`, the reference
/// line (if any) one more.
pub fn render_svg(series: &[PlotSeries], reference: Option<&ReferenceLine>, title: &str) -> Result<String> {
    if series.is_empty() {
        return Err(Error::EmptyPlot("no series"));
    }
    let axes = Axes::fit(series, reference)?;
    let mut s = String::new();
    let w = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    w(
        &mut s,
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        ),
    );
    w(&mut s, format!(r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#));
    w(
        &mut s,
        format!(r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, (LEFT + WIDTH - RIGHT) / 2.0, escape(title)),
    );

    let (x0, y0) = (LEFT, HEIGHT - BOTTOM);
    let (x1, y1) = (WIDTH - RIGHT, TOP);
    w(&mut s, r#"<g class="axes" stroke="black" fill="none">"#.to_string());
    w(&mut s, format!(r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#));
    w(&mut s, format!(r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#));
    w(&mut s, "</g>".to_string());
    let mut ticks = String::new();
    let (xa, xb) = (axes.x_min.log10().round() as i32, axes.x_max.log10().round() as i32);
    for e in xa..=xb {
        let (px, _) = axes.to_px(10f64.powi(e), axes.y_min);
        let _ = writeln!(ticks, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(ticks, r#"<text x="{px:.2}" y="{}" text-anchor="middle">1e{e}</text>"#, y0 + 18.0);
    }
    let (ya, yb) = (axes.y_min.log10().round() as i32, axes.y_max.log10().round() as i32);
    let stride = ((yb - ya) / 10 + 1).max(1);
    for e in (ya..=yb).step_by(stride as usize) {
        let (_, py) = axes.to_px(axes.x_min, 10f64.powi(e));
        let _ = writeln!(ticks, r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(ticks, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"#, x0 - 8.0, py + 4.0);
    }
    s.push_str(&ticks);
    w(
        &mut s,
        format!(r#"<text x="{}" y="{}" text-anchor="middle">iteration k</text>"#, (x0 + x1) / 2.0, HEIGHT - 20.0),
    );

    let mut legend = Vec::new();
    for (i, series) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(usable)
            .map(|&(x, y)| {
                let (px, py) = axes.to_px(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let dash = if series.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        w(
            &mut s,
            format!(
                r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                pts.join(" ")
            ),
        );
        if pts.len() == 1 {
            let (px, py) = pts[0].split_once(',').unwrap_or(("0", "0"));
            w(&mut s, format!(r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#));
        }
        legend.push((series.label.clone(), color, series.dashed));
    }
    if let Some(r) = reference {
        let (px0, py0) = axes.to_px(axes.x_min, r.value_at(axes.x_min));
        let (px1, py1) = axes.to_px(axes.x_max, r.value_at(axes.x_max));
        w(
            &mut s,
            format!(
                r#"<polyline class="reference" fill="none" stroke="black" stroke-dasharray="2,3" points="{px0:.6},{py0:.6} {px1:.6},{py1:.6}"/>"#
            ),
        );
        legend.push((r.label(), "black", true));
    }
    for (i, (label, color, dashed)) in legend.iter().enumerate() {
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let dash = if *dashed { r#" stroke-dasharray="6,4""# } else { "" };
        w(
            &mut s,
            format!(r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.5"{dash}/>"#, lx + 24.0),
        );
        w(&mut s, format!(r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, escape(label)));
    }
    w(&mut s, "</svg>".to_string());
    Ok(s)
}

pub fn emit_plot(
    series: &[PlotSeries],
    reference: Option<&ReferenceLine>,
    title: &str,
    path: &Path,
) -> Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyPlot("empty trace"));
    }
    fs::write(path, render_svg(series, reference, title)?)?;
    Ok(())
}

/// One series per figure metric.
pub fn figure_series(rows: &[TraceRow]) -> Vec<PlotSeries> {
    Metric::FIGURE.iter().map(|&m| PlotSeries::from_trace(rows, m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::TheoremId;

    fn rows(t: usize) -> Vec<TraceRow> {
        (1..=t)
            .map(|k| {
                let v = 1.0 / k as f64;
                TraceRow {
                    k,
                    gamma_k: v,
                    dist_sq: v,
                    f_gap: 2.0 * v,
                    avg_gap: 3.0 * v,
                    grad_norm_sq: v,
                    min_grad_norm_sq: v * v,
                    proj_active: false,
                }
            })
            .collect()
    }

    #[test]
    fn one_trace_one_bound_gives_two_polylines() {
        let curve = BoundCurve {
            theorem: TheoremId::T2Iterate,
            points: (3..=100).map(|k| (k, 10.0 / k as f64)).collect(),
        };
        let series = [PlotSeries::from_trace(&rows(100), Metric::DistSq), PlotSeries::from_bound(&curve)];
        let svg = render_svg(&series, None, "t").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="axes""#).count(), 1);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn reference_line_passes_through_anchor_with_slope() {
        let r = ReferenceLine { c0: 5.0, slope: -1.0 };
        let svg = render_svg(&figure_series(&rows(1000)), Some(&r), "t").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 5);
        let line = svg.lines().find(|l| l.contains(r#"class="reference""#)).unwrap();
        let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
        let parsed: Vec<(f64, f64)> = pts
            .split(' ')
            .map(|p| {
                let (a, b) = p.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect();
        let axes = Axes::fit(&figure_series(&rows(1000)), Some(&r)).unwrap();
        let (k0, v0) = axes.from_px(parsed[0].0, parsed[0].1);
        let (k1, v1) = axes.from_px(parsed[1].0, parsed[1].1);
        let slope = (v1.log10() - v0.log10()) / (k1.log10() - k0.log10());
        assert!((slope + 1.0).abs() < 1e-5, "{slope}");
        let at_one = v0.log10() + slope * (1f64.log10() - k0.log10());
        assert!((at_one - 5f64.log10()).abs() < 1e-5);
    }

    #[test]
    fn legend_lists_the_four_metrics() {
        let svg = render_svg(&figure_series(&rows(10)), None, "t").unwrap();
        for m in Metric::FIGURE {
            assert!(svg.contains(&escape(metric_label(m))));
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(render_svg(&[], None, "t"), Err(Error::EmptyPlot(_))));
        let empty = PlotSeries { label: "x".into(), points: vec![], dashed: false };
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot(&[empty], None, "t", &dir.path().join("p.svg")).is_err());
    }

    #[test]
    fn plot_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        emit_plot(&figure_series(&rows(50)), None, "t", &path).unwrap();
        assert!(fs::read_to_string(path).unwrap().contains("<polyline"));
    }
}
