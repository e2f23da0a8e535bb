//! Command-line front end for the power-buffer model: scenario files,
//! subcommand drivers and their CSV/report outputs.

pub mod commands;
pub mod error;
pub mod scenario;

pub use commands::{
    run_envelope, run_selfcheck, run_simulate, run_stability, run_worst_current, EnvelopeOpts,
    Grid, Output, RunReport, SimulateOpts, StabilityOpts, WorstCurrentOpts,
};
pub use error::{exit, CliError};
pub use scenario::{Resolved, ScenarioFile};
