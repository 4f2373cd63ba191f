//! Boundary-driven zero-range process with slow reservoirs: exact
//! simulation, invariant-measure machinery, the hydrodynamic PDE solver and
//! the experiment harness that ties them together.

pub mod coupling;
pub mod error;
pub mod harness;
pub mod measures;
pub mod observables;
pub mod oracle;
pub mod pde;
pub mod process;
pub mod rate_index;
pub mod rates;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
