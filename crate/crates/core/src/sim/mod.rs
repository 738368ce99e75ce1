//! Time-domain simulation, trajectory logging and stability verdicts.

mod classify;
mod engine;
mod log;
mod rk4;
mod spec;

pub use classify::{classify_log, Classification, ClassifyOptions, StabilityVerdict};
pub use engine::{classify_options, run, run_detailed, Engine, Evaluation, InitMethod, RunInfo, RunOutput, SystemState};
pub use log::{fmt_float, ConverterTrace, TimeSeriesLog};
pub use rk4::rk4_step;
pub use spec::{ConverterSpec, GridSpec, ScenarioSpec, SolverSettings, CHANNELS};

use crate::error::Result;

/// Classifies a log against its scenario.
pub fn classify(log: &TimeSeriesLog, spec: &ScenarioSpec) -> Result<StabilityVerdict> {
    classify_log(log, &classify_options(spec))
}
