//! Plain simulation and PDE runs driven by a config file.

use super::config::ExperimentConfig;
use super::experiments::initial_sampler;
use crate::error::{Error, Result};
use crate::measures::{hydrostatic_profile, GrandCanonical};
use crate::pde::{self, BoundarySpec, DensityField, Solution, SolveControls};
use crate::sim::{ensemble_run, EnsembleSpec, Schedule, Trajectory};

/// Independent replicas from the configured initial law, recorded at
/// `numerics.times` up to `numerics.horizon`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let nu = &cfg.numerics;
    let params = cfg.model.params()?;
    let gc = GrandCanonical::new(params.g_handle());
    let sampler = initial_sampler(&params, &gc, &nu.initial)?;
    let mut times: Vec<f64> = nu.times.iter().copied().filter(|&t| t < nu.horizon).collect();
    times.push(nu.horizon);
    let schedule = Schedule::Times(times);
    let spec = EnsembleSpec { replicas: nu.replicas, master_seed: nu.seed };
    ensemble_run(&params, |rng| Ok(sampler.sample(rng)), nu.horizon, &schedule, spec)
        .into_iter()
        .collect()
}

/// Solves the hydrodynamic equation from the configured initial profile on
/// the first configured cell count.
pub fn pde_solve(cfg: &ExperimentConfig) -> Result<Solution> {
    cfg.validate()?;
    let nu = &cfg.numerics;
    let params = cfg.model.params()?;
    let gc = GrandCanonical::new(params.g_handle());
    let cells = *nu.cells.first().ok_or_else(|| Error::Config("no cell count given".into()))?;
    let rho = (0..cells)
        .map(|i| {
            let u = (i as f64 + 0.5) / cells as f64;
            match nu.initial.density(u, &params, &gc)? {
                Some(v) => Ok(v),
                None => hydrostatic_profile(u, &params, &gc),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let field0 = DensityField::new(rho, 0.0)?;
    let controls = SolveControls { cfl: nu.cfl, max_retries: 20, output_times: nu.times.clone() };
    pde::solve(&field0, &BoundarySpec::from_params(&params), &gc, nu.horizon, &controls)
}
