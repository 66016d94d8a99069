//! Low-frequency latent alignment for multi-turn latent editing, together
//! with the spectral diagnostics used to measure and attribute drift.
//!
//! - [`latent`]: tensor container, NPY I/O, channel statistics, box filter.
//! - [`spectral`]: power spectra, radial binning, relative differences.
//! - [`alignment`]: anchor state machine and the per-turn alignment step.
//! - [`drift`]: synthetic transition models, trajectories, drift reports.
//! - [`pipeline`]: sessions, the external adapter protocol, simulation
//!   configs; the `lfa` binary is a thin layer over this.

pub mod alignment;
pub mod drift;
pub mod error;
pub mod latent;
pub mod pipeline;
pub mod spectral;

pub use error::{LfaError, Result};
