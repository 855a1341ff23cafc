use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consgrad::bounds::{bound_curve, BoundConstants, BoundCurve, TheoremId};
use consgrad::datagen::{gen_adjacency, gen_features, gen_ground_truth, write_dataset_csv, MixtureParams};
use consgrad::harness::plot::{emit_plot, figure_series, PlotSeries, ReferenceLine};
use consgrad::harness::{check_rate, run_experiment, verify_suite, ExperimentConfig, RawConfig};
use consgrad::optimizer::{read_trace_csv, Metric};
use consgrad::problems::ProblemKind;
use consgrad::{fmt_f64, Result};

#[derive(Parser)]
#[command(name = "consgrad", version, about = "SGD with unbiased and consistent gradient estimators on graph problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write A, X, w* and y of a generated instance as CSV.
    Generate {
        #[arg(long, default_value = "convex")]
        kind: ProblemKind,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        p: f64,
        #[arg(long, default_value_t = 10)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        d2: usize,
        /// Same meaning as `data_seed` of `run`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-seed experiment and write traces, bounds, summary and plot.
    Run {
        /// Flat TOML config; flags below override its keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: RawConfig,
    },
    /// Evaluate a bound curve and write it as CSV (stdout without --out).
    Bounds {
        #[arg(long)]
        theorem: TheoremId,
        #[arg(long = "G")]
        g: Option<f64>,
        #[arg(long)]
        l: Option<f64>,
        #[arg(long = "L")]
        big_l: Option<f64>,
        /// Region diameter.
        #[arg(long = "D")]
        d: Option<f64>,
        #[arg(long)]
        c: Option<f64>,
        #[arg(long = "D-f")]
        d_f: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long = "T")]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 3000)]
        k_max: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a log-log slope to one trace column.
    CheckRate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metric: Metric,
        #[arg(long, allow_hyphen_values = true)]
        target_slope: f64,
        #[arg(long)]
        window_lo: usize,
        #[arg(long)]
        window_hi: usize,
    },
    /// Render a trace (and optional bound CSVs) as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        bound: Vec<PathBuf>,
        /// Slope of a dashed reference line through the first row of --metric.
        #[arg(long, allow_hyphen_values = true)]
        reference_slope: Option<f64>,
        #[arg(long, default_value = "dist_sq")]
        metric: Metric,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property-check suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate {
            kind,
            n,
            p,
            d,
            d2,
            seed,
            out,
        } => {
            let adjacency = gen_adjacency(n, p, seed)?;
            let features = gen_features(n, &MixtureParams::standard(d), seed)?;
            let truth = gen_ground_truth(kind, &adjacency, &features, d2, seed)?;
            write_dataset_csv(&out, &adjacency, &features, &truth)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let raw = match config {
                Some(path) => RawConfig::load(&path)?,
                None => RawConfig::default(),
            };
            let cfg = ExperimentConfig::resolve(&raw.merged(&overrides))?;
            let outcome = run_experiment(&cfg, Some(&out))?;
            let r = &outcome.rate;
            println!(
                "rate {} slope={:.4} window=[{}, {}] target={} r2={:.4} -> {}",
                r.metric,
                r.slope,
                r.k_lo,
                r.k_hi,
                r.target_slope,
                r.r_squared,
                r.verdict()
            );
            for e in &outcome.envelopes {
                println!(
                    "envelope {} on {}: worst ratio {:.4} at k={} (slack {}) -> {}",
                    e.theorem,
                    e.metric,
                    e.worst_ratio,
                    e.worst_k,
                    e.slack,
                    if e.passed { "pass" } else { "fail" }
                );
            }
            if outcome.projection_activated() {
                println!("note: projection activated in at least one run");
            }
            println!("artifacts in {}", out.display());
            Ok(outcome.all_passed())
        }
        Command::Bounds {
            theorem,
            g,
            l,
            big_l,
            d,
            c,
            d_f,
            rho,
            delta,
            horizon,
            k_max,
            out,
        } => {
            let consts = BoundConstants {
                g,
                l,
                big_l,
                d,
                c,
                d_f,
                rho,
                delta,
                horizon,
            };
            let curve = bound_curve(theorem, &consts, k_max)?;
            match out {
                Some(path) => curve.write_csv(&path)?,
                None => {
                    println!("k,value,theorem");
                    for (k, v) in &curve.points {
                        println!("{k},{},{theorem}", fmt_f64(*v));
                    }
                }
            }
            Ok(true)
        }
        Command::CheckRate {
            trace,
            metric,
            target_slope,
            window_lo,
            window_hi,
        } => {
            let rows = read_trace_csv(&trace)?;
            let r = check_rate(&rows, metric, target_slope, (window_lo, window_hi))?;
            println!(
                "metric={} window=[{},{}] slope={} intercept={} r2={} used={} excluded={} floor_cutoff={} target={} verdict={}",
                r.metric,
                r.k_lo,
                r.k_hi,
                fmt_f64(r.slope),
                fmt_f64(r.intercept),
                fmt_f64(r.r_squared),
                r.used,
                r.excluded,
                r.floor_cutoff.map_or("none".to_string(), |k| k.to_string()),
                r.target_slope,
                r.verdict()
            );
            Ok(r.passed)
        }
        Command::Plot {
            trace,
            bound,
            reference_slope,
            metric,
            title,
            out,
        } => {
            let rows = read_trace_csv(&trace)?;
            let mut series = figure_series(&rows);
            for path in &bound {
                series.push(PlotSeries::from_bound(&BoundCurve::read_csv(path)?));
            }
            let reference = match (reference_slope, rows.first()) {
                (Some(slope), Some(first)) => Some(ReferenceLine {
                    c0: metric.of(first),
                    slope,
                }),
                _ => None,
            };
            emit_plot(&series, reference.as_ref(), &title, &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::Verify { seed } => {
            let report = verify_suite(seed);
            println!("{report}");
            Ok(report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
