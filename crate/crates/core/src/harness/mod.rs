//! Configuration, experiment drivers and reports.

pub mod config;
pub mod experiments;
pub mod presets;
pub mod report;
pub mod tools;

pub use config::{ExperimentConfig, ExperimentKind, InitialSpec, ModelConfig, NumericsConfig, OutputConfig, OutputFormat};
pub use experiments::run_experiment;
pub use report::{Criterion, Report, Table};
pub use presets::{neumann_mass_preset, preset};
pub use tools::{pde_solve, simulate};
