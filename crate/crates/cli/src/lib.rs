//! Scenario ingestion, runs, sweeps, calibration and distribution reports
//! for the `ibntopo` command.

pub mod analyze;
pub mod calibrate;
pub mod output;
pub mod run;
pub mod scenario;
pub mod sweep;

pub use run::{execute, run_scenario, RunResult};
pub use scenario::{GeneratorSpec, ScenarioFile};
pub use sweep::{sweep, SweepParam, SweepRow, SweepTable};
