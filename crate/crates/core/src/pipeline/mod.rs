//! File-level plumbing behind the `lfa` binary: the external adapter
//! protocol, persistent sessions, config files and the simulate runner.

pub mod adapter;
pub mod config;
pub mod session;
pub mod simulate;

pub use adapter::AdapterSpec;
pub use session::{Session, SessionConfig, StepInput, StepOutcome};
pub use simulate::{run_simulation, SimConfig, SimOutcome};
