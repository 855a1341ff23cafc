//! Experiment plumbing behind the `consgrad` binary.

pub mod config;
pub mod experiment;
pub mod plot;
pub mod rate;
pub mod verify;

pub use config::{ExperimentConfig, RawConfig, ScheduleConfig, ScheduleRule};
pub use experiment::{run_experiment, EnvelopeVerdict, ExperimentOutcome, SeedRun};
pub use plot::{emit_plot, PlotSeries, ReferenceLine};
pub use rate::{check_rate, RateReport};
pub use verify::{verify_suite, CheckResult, VerifyReport};
