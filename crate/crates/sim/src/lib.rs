//! Scripted multi-node scenarios for the warp simulator.

pub mod report;
pub mod runner;
pub mod scenario;

pub use report::{report, Format};
pub use runner::{run_scenario, run_text, ExpectationFailed, Outcome, RunError, RunOptions};
pub use scenario::{ParseError, Scenario};
