//! Experiment configuration, read from TOML.
//!
//! ```toml
//! experiment = "hydrostatic"
//!
//! [model]
//! n = 200
//! theta = 1.0
//! alpha = 1.0
//! g = "linear"
//!
//! [numerics]
//! seed = 7
//! replicas = 24
//!
//! [output]
//! dir = "out"
//! format = "csv"
//! ```
//!
//! The boundary factor `kappa` has no field of its own: it follows from
//! `theta`.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{hydrostatic_profile, GrandCanonical};
use crate::process::ModelParams;
use crate::rates::{RateFunction, RateSpec, DEFAULT_K_PROBE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    #[default]
    Invariance,
    Oracle,
    Hydrostatic,
    Hydrodynamic,
    Martingale,
    Replacement,
    Attractiveness,
    PdeConvergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Invariance => "invariance",
            ExperimentKind::Oracle => "oracle",
            ExperimentKind::Hydrostatic => "hydrostatic",
            ExperimentKind::Hydrodynamic => "hydrodynamic",
            ExperimentKind::Martingale => "martingale",
            ExperimentKind::Replacement => "replacement",
            ExperimentKind::Attractiveness => "attractiveness",
            ExperimentKind::PdeConvergence => "pde-convergence",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
            .map_err(|_| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Model parameters as they appear in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub theta: f64,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "linear")]
    pub g: RateSpec,
    /// Radius of convergence for table-defined rates whose tail is not
    /// recognized automatically.
    #[serde(default)]
    pub phi_star: Option<f64>,
    #[serde(default = "yes")]
    pub diffusive: bool,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn linear() -> RateSpec {
    RateSpec::Name("linear".into())
}

impl ModelConfig {
    pub fn specialized(n: usize, theta: f64, alpha: f64, g: &str) -> Self {
        ModelConfig {
            n,
            theta,
            alpha,
            beta: 0.0,
            lambda: 0.0,
            delta: 1.0,
            g: RateSpec::Name(g.into()),
            phi_star: None,
            diffusive: true,
        }
    }

    pub fn rate_function(&self) -> Result<Arc<RateFunction>> {
        Ok(Arc::new(RateFunction::new(self.g.family()?, DEFAULT_K_PROBE, self.phi_star)?))
    }

    pub fn params(&self) -> Result<ModelParams> {
        Ok(ModelParams::general(
            self.n,
            self.theta,
            self.alpha,
            self.beta,
            self.lambda,
            self.delta,
            self.rate_function()?,
        )?
        .with_diffusive(self.diffusive))
    }
}

/// Initial macroscopic profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// The stationary product measure with the exact finite-N fugacities.
    Stationary,
    /// No particles.
    Empty,
    /// Constant density.
    Constant { value: f64 },
    /// `factor` times the hydrostatic profile.
    ScaledStationary { factor: f64 },
    /// Linear interpolation between `left` at u = 0 and `right` at u = 1.
    Linear { left: f64, right: f64 },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Stationary
    }
}

impl InitialSpec {
    /// Macroscopic density `gamma(u)`; `None` for the exact stationary law,
    /// which is specified through fugacities instead.
    pub fn density(&self, u: f64, params: &ModelParams, gc: &GrandCanonical) -> Result<Option<f64>> {
        Ok(match self {
            InitialSpec::Stationary => None,
            InitialSpec::Empty => Some(0.0),
            InitialSpec::Constant { value } => Some(*value),
            InitialSpec::ScaledStationary { factor } => Some(factor * hydrostatic_profile(u, params, gc)?),
            InitialSpec::Linear { left, right } => Some(left + (right - left) * u),
        })
    }
}

/// Numerical settings. Every experiment reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub seed: u64,
    pub replicas: usize,
    /// Replica counts per lattice size in sweeps; falls back to `replicas`.
    pub replicas_per_size: Vec<usize>,
    /// Macroscopic simulation horizon.
    pub horizon: f64,
    /// Observation times.
    pub times: Vec<f64>,
    pub burn_in: f64,
    /// Length of the time-averaging window after burn-in.
    pub average_window: f64,
    /// Block fraction for empirical profiles and replacement windows.
    pub eps: f64,
    /// Lattice sizes `N` for sweeps.
    pub sizes: Vec<usize>,
    /// Occupancy caps for the truncated oracle.
    pub caps: Vec<u32>,
    pub state_cap: usize,
    /// Random configurations for the balance check.
    pub balance_samples: usize,
    /// Largest occupancy of random balance configurations.
    pub balance_max_occupancy: u32,
    /// PDE cell counts.
    pub cells: Vec<usize>,
    /// Cell counts for the Robin steady-state check.
    pub steady_cells: Vec<usize>,
    pub steady_horizon: f64,
    pub cfl: f64,
    pub test_function: String,
    pub initial: InitialSpec,
    /// Initial profile for the upper copy in coupling runs.
    pub upper_initial: InitialSpec,
    pub joint_events: u64,
    pub level: f64,
    /// Required gap between the initial profile and the hydrostatic one.
    pub margin: f64,
    /// Largest acceptable L1 distance at the finest lattice.
    pub l1_tolerance: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            seed: 20240601,
            replicas: 32,
            replicas_per_size: Vec::new(),
            horizon: 0.1,
            times: vec![0.1],
            burn_in: 1.0,
            average_window: 0.5,
            eps: 0.05,
            sizes: vec![100, 200, 400],
            caps: vec![10, 20, 30],
            state_cap: crate::oracle::DEFAULT_STATE_CAP,
            balance_samples: 10_000,
            balance_max_occupancy: 6,
            cells: vec![100, 200, 400],
            steady_cells: vec![25, 50, 100],
            steady_horizon: 15.0,
            cfl: 0.9,
            test_function: "u(1-u)".into(),
            initial: InitialSpec::Stationary,
            upper_initial: InitialSpec::Stationary,
            joint_events: 10_000_000,
            level: 0.01,
            margin: 0.0,
            l1_tolerance: 0.05,
        }
    }
}

impl NumericsConfig {
    pub fn replicas_for(&self, index: usize) -> usize {
        self.replicas_per_size.get(index).copied().unwrap_or(self.replicas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unknown format '{s}', expected csv or json"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), format: OutputFormat::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// May be omitted when the command line names the experiment.
    #[serde(default)]
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, model: ModelConfig) -> Self {
        ExperimentConfig {
            experiment,
            model,
            numerics: NumericsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks what can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        self.model.params()?;
        let nu = &self.numerics;
        if !(nu.eps > 0.0 && nu.eps < 0.5) {
            return Err(Error::Config(format!("eps = {} must lie in (0, 1/2)", nu.eps)));
        }
        if !(nu.level > 0.0 && nu.level < 1.0) {
            return Err(Error::Config(format!("level = {} must lie in (0, 1)", nu.level)));
        }
        if !(nu.cfl > 0.0 && nu.cfl <= 1.0) {
            return Err(Error::Config(format!("cfl = {} must lie in (0, 1]", nu.cfl)));
        }
        if nu.times.iter().any(|t| !(*t >= 0.0)) || !(nu.horizon >= 0.0) {
            return Err(Error::Config("times must be non-negative".into()));
        }
        if nu.sizes.iter().any(|&n| n < 3) {
            return Err(Error::Config("lattice sizes must be at least 3".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
experiment = "hydrodynamic"

[model]
n = 100
theta = 2.0
alpha = 1.0
g = "linear"

[numerics]
seed = 3
sizes = [100, 200]
initial = { kind = "scaled-stationary", factor = 0.5 }

[output]
format = "json"
"#;

    #[test]
    fn parses_sample_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Hydrodynamic);
        assert_eq!(cfg.model.delta, 1.0);
        assert_eq!(cfg.numerics.initial, InitialSpec::ScaledStationary { factor: 0.5 });
        assert_eq!(cfg.numerics.replicas, NumericsConfig::default().replicas);
        assert_eq!(cfg.output.format, OutputFormat::Json);
        assert_eq!(cfg.model.params().unwrap().kappa(), 0);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn kappa_is_not_a_setting() {
        let text = SAMPLE.replace("theta = 2.0", "theta = 2.0\nkappa = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_theta_below_one() {
        let text = SAMPLE.replace("theta = 2.0", "theta = 0.5");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn table_rates_parse() {
        let text = SAMPLE.replace(
            "g = \"linear\"",
            "g = { table = [0.0, 1.0, 1.5], tail = \"hold\" }",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.model.rate_function().unwrap().eval(5), 1.5);
    }

    #[test]
    fn experiment_names_parse() {
        for kind in [
            ExperimentKind::Invariance,
            ExperimentKind::Oracle,
            ExperimentKind::Hydrostatic,
            ExperimentKind::Hydrodynamic,
            ExperimentKind::Martingale,
            ExperimentKind::Replacement,
            ExperimentKind::Attractiveness,
            ExperimentKind::PdeConvergence,
        ] {
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<ExperimentKind>().is_err());
    }
}
