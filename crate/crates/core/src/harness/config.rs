//! Experiment configuration: a flat TOML file, CLI overrides, and presets.
//!
//! Every key is optional; unset keys take the preset for the problem kind.
//!
//! | key | default (convex / nonconvex) |
//! |---|---|
//! | `kind` | `convex` |
//! | `n`, `p`, `d`, `d2` | 300, 0.3, 10, 5 |
//! | `estimator` | `layered_consistent` |
//! | `n1`, `n2`, `n3` | 30, 1, 1 / 30, 30, 1 |
//! | `replacement` | false |
//! | `schedule` | `inverse_lk` / `constant` |
//! | `step_scale` | 20 (the `s` in `1/(s l k)`) |
//! | `gamma` | 0.01 (`constant`) |
//! | `c` | 1 (`inverse_sqrt`) |
//! | `g`, `d_f`, `l` | measured when unset where possible |
//! | `rho`, `delta` | 0 |
//! | `iterations` | 3000 |
//! | `seeds` | 1..=16 |
//! | `data_seed` | 0 |
//! | `metric` | `dist_sq` / `min_grad_norm_sq` |
//! | `target_slope` | -0.8 / -0.5 |
//! | `window_lo`, `window_hi` | 100, `iterations` |
//! | `theorems` | `T2_iterate,T2_average,T3_smooth` / `T5_nonconvex` |
//! | `envelope_slack` | 1.05 |
//! | `iterate_stride` | none |

use std::fs;
use std::path::Path;

use clap::Args;
use serde::Deserialize;

use crate::bounds::TheoremId;
use crate::datagen::MixtureParams;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorMode, EstimatorSpec};
use crate::optimizer::{Metric, StepSchedule};
use crate::problems::{ProblemKind, ProblemParams};

/// Raw, partially specified configuration: the file schema and the CLI
/// overrides share this type.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d2: Option<usize>,
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub n1: Option<usize>,
    #[arg(long)]
    pub n2: Option<usize>,
    #[arg(long)]
    pub n3: Option<usize>,
    #[arg(long)]
    pub replacement: Option<bool>,
    #[arg(long)]
    pub schedule: Option<String>,
    #[arg(long)]
    pub step_scale: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub g: Option<f64>,
    #[arg(long)]
    pub d_f: Option<f64>,
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub target_slope: Option<f64>,
    #[arg(long)]
    pub window_lo: Option<usize>,
    #[arg(long)]
    pub window_hi: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub theorems: Option<Vec<String>>,
    #[arg(long)]
    pub envelope_slack: Option<f64>,
    #[arg(long)]
    pub iterate_stride: Option<usize>,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("<file>", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merged(mut self, other: &RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f.clone(); } )* };
        }
        take!(
            kind, n, p, d, d2, estimator, n1, n2, n3, replacement, schedule, step_scale, gamma, c,
            g, d_f, l, rho, delta, iterations, seeds, data_seed, metric, target_slope, window_lo,
            window_hi, theorems, envelope_slack, iterate_stride
        );
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleRule {
    InverseLk,
    InverseSqrt,
    ConstantNonconvex,
    HighProbInverseLk,
    HighProbConstantNonconvex,
    Constant,
}

impl ScheduleRule {
    const ALL: [ScheduleRule; 6] = [
        ScheduleRule::InverseLk,
        ScheduleRule::InverseSqrt,
        ScheduleRule::ConstantNonconvex,
        ScheduleRule::HighProbInverseLk,
        ScheduleRule::HighProbConstantNonconvex,
        ScheduleRule::Constant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleRule::InverseLk => "inverse_lk",
            ScheduleRule::InverseSqrt => "inverse_sqrt",
            ScheduleRule::ConstantNonconvex => "constant_nonconvex",
            ScheduleRule::HighProbInverseLk => "highprob_inverse_lk",
            ScheduleRule::HighProbConstantNonconvex => "highprob_constant_nonconvex",
            ScheduleRule::Constant => "constant",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::config("schedule", format!("unknown rule `{s}`")))
    }
}

/// Step-size rule plus the constants supplied by configuration. Constants
/// that depend on the instance or the run (`l`, `D_f`, `G`) are filled in by
/// [`ScheduleConfig::build`] when not given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub rule: ScheduleRule,
    pub step_scale: f64,
    pub gamma: f64,
    pub c: f64,
    pub g: Option<f64>,
    pub d_f: Option<f64>,
    pub l: Option<f64>,
    pub rho: f64,
    pub delta: f64,
}

impl ScheduleConfig {
    /// Concrete schedule for one run; `measured_l` is the instance's
    /// strong-convexity modulus and `run_d_f` the run's own `D_f`.
    pub fn build(&self, measured_l: Option<f64>, run_d_f: f64, horizon: usize) -> Result<StepSchedule> {
        let l = || {
            self.l
                .or(measured_l)
                .filter(|l| *l > 0.0)
                .ok_or_else(|| Error::config("l", format!("{} needs l > 0", self.rule.name())))
        };
        let g = || {
            self.g
                .ok_or_else(|| Error::config("g", format!("{} needs the gradient bound g", self.rule.name())))
        };
        let d_f = self.d_f.unwrap_or(run_d_f);
        let s = match self.rule {
            ScheduleRule::InverseLk => StepSchedule::InverseLk {
                l: l()?,
                scale: self.step_scale,
            },
            ScheduleRule::InverseSqrt => StepSchedule::InverseSqrt { c: self.c },
            ScheduleRule::ConstantNonconvex => StepSchedule::ConstantNonconvex { d_f, g: g()?, horizon },
            ScheduleRule::HighProbInverseLk => StepSchedule::HighProbInverseLk {
                l: l()?,
                rho: self.rho,
                horizon,
            },
            ScheduleRule::HighProbConstantNonconvex => StepSchedule::HighProbConstantNonconvex {
                d_f,
                g: g()?,
                horizon,
                delta: self.delta,
            },
            ScheduleRule::Constant => StepSchedule::Constant { gamma: self.gamma },
        };
        s.validate().map_err(|e| Error::config("schedule", e.to_string()))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemParams,
    pub data_seed: u64,
    pub estimator: EstimatorSpec,
    pub schedule: ScheduleConfig,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub metric: Metric,
    pub target_slope: f64,
    pub window: (usize, usize),
    pub theorems: Vec<TheoremId>,
    pub envelope_slack: f64,
    pub iterate_stride: Option<usize>,
}

impl ExperimentConfig {
    /// Resolve against the preset for the configured kind, validating every
    /// field; errors name the offending key.
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let kind = match &raw.kind {
            Some(k) => k.parse::<ProblemKind>().map_err(|e| Error::config("kind", e.to_string()))?,
            None => ProblemKind::Convex,
        };
        let convex = kind == ProblemKind::Convex;
        let base = ProblemParams::standard(kind);
        let d = raw.d.unwrap_or(base.d);
        let problem = ProblemParams {
            kind,
            n: raw.n.unwrap_or(base.n),
            p: raw.p.unwrap_or(base.p),
            d,
            d2: raw.d2.unwrap_or(base.d2),
            mixture: MixtureParams::standard(d),
        };
        if problem.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&problem.p) {
            return Err(Error::config("p", format!("{} outside [0, 1]", problem.p)));
        }
        if d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if !convex && problem.d2 == 0 {
            return Err(Error::config("d2", "must be at least 1"));
        }

        let mode = match &raw.estimator {
            Some(m) => m.parse::<EstimatorMode>().map_err(|e| Error::config("estimator", e.to_string()))?,
            None => EstimatorMode::LayeredConsistent,
        };
        let (dn1, dn2, dn3) = if convex { (30, 1, 1) } else { (30, 30, 1) };
        let mut estimator = match mode {
            EstimatorMode::Exact => EstimatorSpec::exact(),
            EstimatorMode::MinibatchUnbiased => {
                EstimatorSpec::minibatch(if convex { raw.n2.unwrap_or(1) } else { raw.n3.unwrap_or(1) })
            }
            EstimatorMode::LayeredConsistent => EstimatorSpec::layered(
                raw.n1.unwrap_or(dn1),
                raw.n2.unwrap_or(dn2),
                raw.n3.unwrap_or(dn3),
            ),
        };
        estimator = estimator.with_replacement(raw.replacement.unwrap_or(false));
        if mode != EstimatorMode::Exact {
            for (name, v) in ["n1", "n2", "n3"].iter().zip(estimator.sample_sizes(kind)) {
                if v == 0 || v > problem.n {
                    return Err(Error::config(*name, format!("{v} outside [1, n = {}]", problem.n)));
                }
            }
        }

        let rule = match &raw.schedule {
            Some(s) => ScheduleRule::parse(s)?,
            None if convex => ScheduleRule::InverseLk,
            None => ScheduleRule::Constant,
        };
        let schedule = ScheduleConfig {
            rule,
            step_scale: raw.step_scale.unwrap_or(20.0),
            gamma: raw.gamma.unwrap_or(0.01),
            c: raw.c.unwrap_or(1.0),
            g: raw.g,
            d_f: raw.d_f,
            l: raw.l,
            rho: raw.rho.unwrap_or(0.0),
            delta: raw.delta.unwrap_or(0.0),
        };
        for (name, v) in [
            ("step_scale", schedule.step_scale),
            ("gamma", schedule.gamma),
            ("c", schedule.c),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        for (name, v) in [("g", schedule.g), ("l", schedule.l)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::config(name, format!("must be positive, got {v}")));
                }
            }
        }
        if let Some(v) = schedule.d_f {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config("d_f", format!("must be nonnegative, got {v}")));
            }
        }
        if !(schedule.rho >= 0.0) {
            return Err(Error::config("rho", "must be nonnegative"));
        }
        if !(0.0..1.0).contains(&schedule.delta) {
            return Err(Error::config("delta", format!("{} outside [0, 1)", schedule.delta)));
        }

        let iterations = raw.iterations.unwrap_or(3000);
        if iterations == 0 {
            return Err(Error::config("iterations", "must be at least 1"));
        }
        let seeds = raw.seeds.clone().unwrap_or_else(|| (1..=16).collect());
        if seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != seeds.len() {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }

        let metric = match &raw.metric {
            Some(m) => m.parse::<Metric>().map_err(|e| Error::config("metric", e.to_string()))?,
            None if convex => Metric::DistSq,
            None => Metric::MinGradNormSq,
        };
        let target_slope = raw.target_slope.unwrap_or(if convex { -0.8 } else { -0.5 });
        if !target_slope.is_finite() {
            return Err(Error::config("target_slope", "must be finite"));
        }
        let window = (raw.window_lo.unwrap_or(100.min(iterations)), raw.window_hi.unwrap_or(iterations));
        if !(window.0 >= 1 && window.0 < window.1 && window.1 <= iterations) {
            return Err(Error::config(
                "window_lo",
                format!("window [{}, {}] must satisfy 1 ≤ lo < hi ≤ iterations = {iterations}", window.0, window.1),
            ));
        }

        let theorems = match &raw.theorems {
            Some(list) => list
                .iter()
                .map(|t| t.trim().parse::<TheoremId>().map_err(|e| Error::config("theorems", e.to_string())))
                .collect::<Result<Vec<_>>>()?,
            None if convex => vec![TheoremId::T2Iterate, TheoremId::T2Average, TheoremId::T3Smooth],
            None => vec![TheoremId::T5Nonconvex],
        };
        let envelope_slack = raw.envelope_slack.unwrap_or(1.05);
        if !(envelope_slack >= 1.0 && envelope_slack.is_finite()) {
            return Err(Error::config("envelope_slack", "must be at least 1"));
        }
        if raw.iterate_stride == Some(0) {
            return Err(Error::config("iterate_stride", "must be at least 1"));
        }

        Ok(Self {
            problem,
            data_seed: raw.data_seed.unwrap_or(0),
            estimator,
            schedule,
            iterations,
            seeds,
            metric,
            target_slope,
            window,
            theorems,
            envelope_slack,
            iterate_stride: raw.iterate_stride,
        })
    }

    pub fn standard(kind: ProblemKind) -> Self {
        let raw = RawConfig {
            kind: Some(kind.name().to_string()),
            ..RawConfig::default()
        };
        Self::resolve(&raw).expect("presets are valid")
    }
}
