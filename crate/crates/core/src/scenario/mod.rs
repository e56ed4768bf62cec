//! Scenario definition, seeded execution, metrics and report tables.

mod config;
mod metrics;
mod report;
mod run;
pub mod suites;

pub use config::{ControllerTuning, Mode, PedestrianSpec, RobotSpec, ScenarioConfig};
pub use metrics::{compute_metrics, Metrics, TickLog, CONTACT_RANGE, STATIONARY_STEP, UNSAFE_RANGE};
pub use report::{emit_report, fleet_table, runs_table, unit_table, FLEET_TABLE_HEADER, RUNS_HEADER, UNIT_TABLE_HEADER};
pub use run::{check_models, repetition_seed, run_repetition, run_scenario, Models, RunResult, ScenarioResult};
