//! Ready-made configurations at the scale used by the acceptance suite.

use super::config::{ExperimentConfig, ExperimentKind, InitialSpec, ModelConfig};

/// Default configuration for `kind`.
pub fn preset(kind: ExperimentKind) -> ExperimentConfig {
    let linear = |n, theta, alpha| ModelConfig::specialized(n, theta, alpha, "linear");
    let mut cfg = match kind {
        ExperimentKind::Invariance => ExperimentConfig::new(kind, linear(20, 1.0, 1.0)),
        ExperimentKind::Oracle => ExperimentConfig::new(kind, linear(3, 1.0, 0.5)),
        ExperimentKind::Hydrostatic => ExperimentConfig::new(kind, linear(200, 1.0, 1.0)),
        ExperimentKind::Hydrodynamic => ExperimentConfig::new(kind, linear(100, 1.0, 1.0)),
        ExperimentKind::Martingale => ExperimentConfig::new(kind, linear(100, 1.0, 1.0)),
        ExperimentKind::Replacement => ExperimentConfig::new(kind, linear(100, 1.0, 1.0)),
        ExperimentKind::Attractiveness => ExperimentConfig::new(kind, linear(100, 1.0, 1.0)),
        ExperimentKind::PdeConvergence => ExperimentConfig::new(kind, linear(100, 1.0, 1.0)),
    };
    let nu = &mut cfg.numerics;
    match kind {
        ExperimentKind::Invariance => {
            nu.replicas = 500;
            nu.horizon = 2.0;
        }
        ExperimentKind::Oracle => nu.caps = vec![10, 20, 30],
        ExperimentKind::Hydrostatic => {
            nu.replicas = 24;
            nu.burn_in = 1.0;
            nu.average_window = 0.5;
            nu.eps = 0.05;
        }
        ExperimentKind::Hydrodynamic => {
            nu.replicas = 200;
            nu.sizes = vec![100, 200, 400];
            nu.times = vec![0.1];
            nu.initial = InitialSpec::Constant { value: 0.5 };
            nu.cells = vec![400];
        }
        ExperimentKind::Martingale => {
            nu.sizes = vec![100, 200];
            nu.replicas = 2000;
            nu.replicas_per_size = vec![2000, 1000];
            nu.times = vec![0.05, 0.1];
            nu.test_function = "u(1-u)".into();
            nu.initial = InitialSpec::Constant { value: 0.5 };
        }
        ExperimentKind::Replacement => {
            nu.sizes = vec![100, 200, 400];
            nu.replicas = 16;
            nu.eps = 0.1;
            nu.horizon = 0.05;
            nu.test_function = "u2".into();
            nu.initial = InitialSpec::Constant { value: 0.5 };
        }
        ExperimentKind::Attractiveness => {
            nu.replicas = 1;
            nu.joint_events = 10_000_000;
            nu.initial = InitialSpec::Empty;
            nu.upper_initial = InitialSpec::Stationary;
        }
        ExperimentKind::PdeConvergence => {
            nu.cells = vec![100, 200, 400];
            nu.horizon = 0.1;
            nu.steady_cells = vec![25, 50, 100];
            nu.steady_horizon = 15.0;
        }
    }
    cfg
}

/// The Neumann-regime variant of the hydrodynamic preset: `theta = 2`,
/// `gamma = R(alpha) / 2`, observed up to `t = 0.5`.
pub fn neumann_mass_preset() -> ExperimentConfig {
    let mut cfg = preset(ExperimentKind::Hydrodynamic);
    cfg.model.theta = 2.0;
    cfg.numerics.sizes = vec![100, 200];
    cfg.numerics.replicas = 20;
    cfg.numerics.times = vec![0.5];
    cfg.numerics.initial = InitialSpec::ScaledStationary { factor: 0.5 };
    cfg
}
