//! Experiment drivers.

use std::sync::Arc;

use rand::Rng;

use super::config::{ExperimentConfig, ExperimentKind, InitialSpec, ModelConfig};
use super::report::{Report, Table};
use crate::coupling::CoupledState;
use crate::error::{Error, Result};
use crate::measures::{
    asymptotic_fugacity, fugacity_profile, hydrostatic_profile, stationary_balance_residual, GrandCanonical,
    ProductSampler, ProfileSource,
};
use crate::observables::{
    dynkin_drift, generator_on_pairing, window_len, GeneratorCoefficients, MartingaleTracker, ReplacementTracker,
    TestFunction, TimeWeight,
};
use crate::oracle::truncated_oracle;
use crate::pde::{self, BoundarySpec, DensityField, SolveControls};
use crate::process::{apply_event, event_rate, total_rate, Configuration, Event, ModelParams};
use crate::rates::RateFunction;
use crate::rng::{Purpose, StreamRng};
use crate::sim::{ensemble_map, EnsembleSpec, Observer, SimState};
use crate::stats::{chi_squared_gof, mean, sample_variance, site_blocks, standard_error};

/// Tail mass below which the truncated oracle must agree with the product
/// measure.
const ORACLE_TAIL_THRESHOLD: f64 = 1e-8;
const ORACLE_TV_TOLERANCE: f64 = 1e-6;
/// `sup |mass(t) - mass(0)| <= MASS_DRIFT_CONSTANT / N` in the Neumann regime.
const MASS_DRIFT_CONSTANT: f64 = 5.0;
const PDE_MASS_TOLERANCE: f64 = 1e-12;

/// Runs the experiment named in the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::Invariance => experiment_invariance(cfg),
        ExperimentKind::Oracle => experiment_oracle(cfg),
        ExperimentKind::Hydrostatic => experiment_hydrostatic(cfg),
        ExperimentKind::Hydrodynamic => experiment_hydrodynamic(cfg),
        ExperimentKind::Martingale => experiment_martingale(cfg),
        ExperimentKind::Replacement => experiment_replacement(cfg),
        ExperimentKind::Attractiveness => experiment_attractiveness(cfg),
        ExperimentKind::PdeConvergence => experiment_pde_convergence(cfg),
    }
}

fn grand_canonical(params: &ModelParams) -> GrandCanonical {
    GrandCanonical::new(params.g_handle())
}

/// Product-measure sampler for the initial law described by `spec`.
pub fn initial_sampler(params: &ModelParams, gc: &GrandCanonical, spec: &InitialSpec) -> Result<ProductSampler> {
    match spec {
        InitialSpec::Stationary => {
            let profile = fugacity_profile(params)?;
            ProductSampler::new(gc, ProfileSource::Fugacities(profile.values))
        }
        _ => {
            let n = params.n();
            let fug = (1..n)
                .map(|x| {
                    let rho = spec.density(x as f64 / n as f64, params, gc)?.expect("explicit density");
                    gc.phi_inverse(rho)
                })
                .collect::<Result<Vec<_>>>()?;
            ProductSampler::new(gc, ProfileSource::Fugacities(fug))
        }
    }
}

/// Macroscopic initial density; the stationary law maps to the
/// hydrostatic profile.
fn initial_density(spec: &InitialSpec, u: f64, params: &ModelParams, gc: &GrandCanonical) -> Result<f64> {
    match spec.density(u, params, gc)? {
        Some(v) => Ok(v),
        None => hydrostatic_profile(u, params, gc),
    }
}

/// Enforces `gamma(u) + margin <= rho_bar(u)` at every lattice point.
pub fn check_domination(params: &ModelParams, gc: &GrandCanonical, spec: &InitialSpec, margin: f64) -> Result<()> {
    if matches!(spec, InitialSpec::Stationary) && margin == 0.0 {
        return Ok(());
    }
    let n = params.n();
    for x in 1..n {
        let u = x as f64 / n as f64;
        let gamma = initial_density(spec, u, params, gc)?;
        let bar = hydrostatic_profile(u, params, gc)?;
        if gamma + margin > bar * (1.0 + 1e-12) {
            return Err(Error::DominationViolated { u });
        }
    }
    Ok(())
}

/// Exact time integral of every site's occupation from `t0` on.
#[derive(Debug, Clone)]
pub struct OccupationTimes {
    t0: f64,
    since: Vec<f64>,
    acc: Vec<f64>,
}

impl OccupationTimes {
    pub fn new(sites: usize, t0: f64) -> Self {
        OccupationTimes { t0, since: vec![t0; sites], acc: vec![0.0; sites] }
    }

    /// Time-averaged occupation of each site over `[t0, t]`.
    pub fn averages(&self, eta: &Configuration, t: f64) -> Vec<f64> {
        let span = t - self.t0;
        (0..self.acc.len())
            .map(|i| (self.acc[i] + eta.get(i + 1) as f64 * (t - self.since[i])) / span)
            .collect()
    }
}

impl Observer for OccupationTimes {
    fn on_event(&mut self, t: f64, ev: Event, eta: &Configuration) {
        let (changes, count) = ev.changes(eta.sites());
        for &(y, d) in &changes[..count] {
            let old = eta.get(y) as i64 - d as i64;
            self.acc[y - 1] += old as f64 * (t - self.since[y - 1]);
            self.since[y - 1] = t;
        }
    }
}

/// Largest excursion of the particle count from its initial value.
#[derive(Debug, Clone, Copy, Default)]
struct NetCount {
    net: i64,
    sup: i64,
}

impl Observer for NetCount {
    fn on_event(&mut self, _t: f64, ev: Event, _eta: &Configuration) {
        match ev {
            Event::CreateLeft | Event::CreateRight => self.net += 1,
            Event::AnnihilateLeft | Event::AnnihilateRight => self.net -= 1,
            Event::BulkJump { .. } => return,
        }
        self.sup = self.sup.max(self.net.abs());
    }
}

fn block_means(values: impl Fn(usize) -> f64, blocks: &[(usize, usize)]) -> Vec<f64> {
    blocks
        .iter()
        .map(|&(lo, hi)| (lo..=hi).map(&values).sum::<f64>() / (hi - lo + 1) as f64)
        .collect()
}

/// Macroscopic interval represented by each block, with the outer blocks
/// stretched to the ends of `[0, 1]`.
fn block_intervals(blocks: &[(usize, usize)], n: usize) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let last = blocks.len() - 1;
    blocks
        .iter()
        .enumerate()
        .map(|(j, &(lo, hi))| {
            let a = if j == 0 { 0.0 } else { (lo as f64 - 0.5) / nf };
            let b = if j == last { 1.0 } else { (hi as f64 + 0.5) / nf };
            (a, b)
        })
        .collect()
}

/// Mean of the piecewise-constant field over `[a, b]`.
pub fn cell_average(field: &DensityField, a: f64, b: f64) -> f64 {
    let h = field.h();
    let m = field.cells();
    let first = ((a / h).floor() as usize).min(m - 1);
    let last = ((b / h).ceil() as usize).clamp(first + 1, m);
    let mut acc = 0.0;
    for i in first..last {
        let lo = (i as f64 * h).max(a);
        let hi = ((i + 1) as f64 * h).min(b);
        if hi > lo {
            acc += field.rho[i] * (hi - lo);
        }
    }
    acc / (b - a)
}

/// `d_{k+1} <= d_k + max(se_k, se_{k+1})` along the sequence.
fn decreasing_within_se(values: &[f64], ses: &[f64]) -> bool {
    values
        .windows(2)
        .zip(ses.windows(2))
        .all(|(d, s)| d[1] <= d[0] + s[0].max(s[1]))
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(", ")
}

fn random_configuration<R: Rng>(rng: &mut R, sites: usize, max: u32) -> Configuration {
    Configuration::from_occupancy((0..sites).map(|_| rng.gen_range(0..=max)).collect())
}

/// Worst ratio `|residual| / lambda(eta)` of the global balance equation
/// over random configurations, the worst residual, and whether every
/// residual is within `1e-10 lambda(eta)`.
fn balance_check(
    params: &ModelParams,
    fugacities: &[f64],
    samples: usize,
    max_occupancy: u32,
    rng: &mut StreamRng,
) -> Result<(f64, f64, bool)> {
    let unscaled = params.clone().with_diffusive(false);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_res: f64 = 0.0;
    let mut ok = true;
    for _ in 0..samples {
        let eta = random_configuration(rng, params.sites(), max_occupancy);
        let res = stationary_balance_residual(&eta, params, fugacities)?;
        let lam = total_rate(&eta, &unscaled);
        ok &= res.abs() <= 1e-10 * lam;
        worst_res = worst_res.max(res.abs());
        if lam > 0.0 {
            worst_ratio = worst_ratio.max(res.abs() / lam);
        }
    }
    Ok((worst_ratio, worst_res, ok))
}

/// Site-wise pmf of a product measure, truncated where the remaining mass
/// is negligible.
fn site_pmf(gc: &GrandCanonical, phi: f64) -> Result<Vec<f64>> {
    let mut pmf = Vec::new();
    let mut acc = 0.0;
    let mut k = 0u64;
    loop {
        let p = gc.pmf(phi, k)?;
        pmf.push(p);
        acc += p;
        if phi == 0.0 || 1.0 - acc < 1e-13 || k > 100_000 {
            break;
        }
        k += 1;
    }
    Ok(pmf)
}

pub fn experiment_invariance(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let params = cfg.model.params()?;
    let gc = grand_canonical(&params);
    let profile = fugacity_profile(&params)?;
    let mut report = Report::new("invariance");

    if profile.values.iter().all(|&p| p > 0.0) {
        let mut rng = StreamRng::new(nu.seed, 0, Purpose::Balance);
        let (ratio, res, ok) = balance_check(&params, &profile.values, nu.balance_samples, nu.balance_max_occupancy, &mut rng)?;
        report.check(
            "balance",
            ok,
            format!("{} configurations, max |residual| = {res:.3e}, max |residual|/lambda = {ratio:.3e}", nu.balance_samples),
        );
    } else {
        // Without creation the stationary law is the point mass on the
        // empty lattice, which must then be absorbing.
        let rate = total_rate(&Configuration::empty(params.sites()), &params);
        report.check("balance", rate == 0.0, format!("point mass at the empty configuration, exit rate {rate}"));
    }

    let sampler = initial_sampler(&params, &gc, &InitialSpec::Stationary)?;
    let spec = EnsembleSpec { replicas: nu.replicas, master_seed: nu.seed };
    let finals: Vec<Result<Configuration>> = ensemble_map(spec, |_, mut init, dynamics| {
        let eta = sampler.sample(&mut init);
        let mut state = SimState::new(&params, eta, dynamics)?;
        state.run_until(&params, nu.horizon, &mut ())?;
        Ok(state.eta().clone())
    });
    let finals = finals.into_iter().collect::<Result<Vec<_>>>()?;
    let sites = params.sites();
    let threshold = nu.level / sites as f64;
    let mut table = Table::new("sites", &["x", "phi", "statistic", "dof", "p_value"]);
    let mut min_p: f64 = 1.0;
    for x in 1..=sites {
        let samples: Vec<u32> = finals.iter().map(|e| e.get(x)).collect();
        let pmf = site_pmf(&gc, profile.at(x))?;
        let test = chi_squared_gof(&samples, &pmf, 5.0)?;
        min_p = min_p.min(test.p_value);
        table.push(vec![x as f64, profile.at(x), test.statistic, test.dof as f64, test.p_value]);
    }
    report.check(
        "chi_squared",
        min_p > threshold,
        format!(
            "{} replicas to T = {}, smallest p-value {min_p:.4} against Bonferroni threshold {threshold:.2e}",
            nu.replicas, nu.horizon
        ),
    );
    report.tables.push(table);
    Ok(report)
}

pub fn experiment_oracle(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let params = cfg.model.params()?;
    let mut report = Report::new("oracle");
    let mut table = Table::new("caps", &["cap", "states", "tv_direct", "tv_refined", "tail_mass"]);
    let mut caps = nu.caps.clone();
    caps.sort_unstable();
    let mut refined = Vec::new();
    let mut bound_ok = true;
    let mut detail = Vec::new();
    for &k in &caps {
        let r = truncated_oracle(&params, k, nu.state_cap)?;
        table.push(vec![k as f64, r.states as f64, r.tv_direct, r.tv_refined, r.tail_mass]);
        if r.tail_mass < ORACLE_TAIL_THRESHOLD {
            let tv = r.tv_direct.max(r.tv_refined);
            bound_ok &= tv <= ORACLE_TV_TOLERANCE;
            detail.push(format!("K = {k}: TV {tv:.3e}"));
        }
        refined.push(r.tv_refined);
    }
    report.check(
        "tv_bound",
        bound_ok,
        if detail.is_empty() {
            "no cap has tail mass below 1e-8".to_string()
        } else {
            detail.join("; ")
        },
    );
    let strictly = refined.windows(2).all(|w| w[1] < w[0]);
    report.check("tv_decreasing", strictly, format!("refined TV over caps {caps:?}: {}", fmt_seq(&refined)));
    report.tables.push(table);
    Ok(report)
}

/// Hydrostatic target at site `x`.
fn hydrostatic_target(params: &ModelParams, gc: &GrandCanonical, x: usize) -> Result<f64> {
    let n = params.n() as f64;
    // The fugacity at site x is the macroscopic one evaluated at (x + 1)/N.
    let u = if params.theta() == 1.0 { (x as f64 + 1.0) / n } else { x as f64 / n };
    gc.density(asymptotic_fugacity(u, params))
}

pub fn experiment_hydrostatic(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let params = cfg.model.params()?;
    let gc = grand_canonical(&params);
    let sites = params.sites();
    let blocks = site_blocks(sites, window_len(nu.eps, params.n()));
    let sampler = initial_sampler(&params, &gc, &InitialSpec::Stationary)?;
    let start = nu.burn_in;
    let stop = nu.burn_in + nu.average_window;
    let spec = EnsembleSpec { replicas: nu.replicas, master_seed: nu.seed };
    let runs: Vec<Result<Vec<f64>>> = ensemble_map(spec, |_, mut init, dynamics| {
        let mut state = SimState::new(&params, sampler.sample(&mut init), dynamics)?;
        state.run_until(&params, start, &mut ())?;
        let mut occ = OccupationTimes::new(sites, start);
        state.run_until(&params, stop, &mut occ)?;
        let avg = occ.averages(state.eta(), stop);
        Ok(block_means(|x| avg[x - 1], &blocks))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = (1..=sites).map(|x| hydrostatic_target(&params, &gc, x)).collect::<Result<_>>()?;
    let block_targets = block_means(|x| targets[x - 1], &blocks);

    let mut table = Table::new("profile", &["lo", "hi", "u", "mean", "se", "target"]);
    let (mut max_dev, mut max_se): (f64, f64) = (0.0, 0.0);
    for (j, &(lo, hi)) in blocks.iter().enumerate() {
        let col: Vec<f64> = runs.iter().map(|r| r[j]).collect();
        let (m, se) = (mean(&col), standard_error(&col));
        max_dev = max_dev.max((m - block_targets[j]).abs());
        max_se = max_se.max(se);
        let u = 0.5 * (lo + hi) as f64 / params.n() as f64;
        table.push(vec![lo as f64, hi as f64, u, m, se, block_targets[j]]);
    }
    report_hydrostatic(table, max_dev, max_se, nu.replicas)
}

fn report_hydrostatic(table: Table, max_dev: f64, max_se: f64, replicas: usize) -> Result<Report> {
    let mut report = Report::new("hydrostatic");
    report.check(
        "profile",
        max_dev <= 3.0 * max_se,
        format!("{} blocks, {replicas} replicas: max deviation {max_dev:.4e}, MC standard error {max_se:.4e}", table.rows.len()),
    );
    report.tables.push(table);
    Ok(report)
}

/// Per-size outcome of the hydrodynamic sweep.
struct HydroRun {
    /// `[time][replica][block]`.
    profiles: Vec<Vec<Vec<f64>>>,
    sup_net: Vec<i64>,
}

pub fn experiment_hydrodynamic(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let base = cfg.model.params()?;
    let gc = grand_canonical(&base);
    let mut times = nu.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.is_empty() {
        return Err(Error::Config("hydrodynamic experiment needs observation times".into()));
    }
    let horizon = *times.last().expect("non-empty");
    let neumann = base.kappa() == 0;

    let cells = *nu.cells.iter().max().unwrap_or(&400);
    let field0 = DensityField::from_profile(cells, |u| initial_density(&nu.initial, u, &base, &gc).unwrap_or(f64::NAN))?;
    if field0.rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::Config("initial profile could not be evaluated".into()));
    }
    let bc = BoundarySpec::from_params(&base);
    let controls = SolveControls { cfl: nu.cfl, output_times: times.clone(), ..SolveControls::default() };
    let solution = pde::solve(&field0, &bc, &gc, horizon, &controls)?;
    let frame_at = |t: f64| {
        solution
            .frames
            .iter()
            .find(|f| (f.t - t).abs() <= 1e-12 * t.max(1.0))
            .expect("solver keeps every output time")
    };

    let mut report = Report::new("hydrodynamic");
    let mut l1_table = Table::new("l1", &["n", "t", "replicas", "l1", "se"]);
    let mut profile_table = Table::new("profiles", &["n", "t", "u", "empirical", "pde"]);
    let mut mass_table = Table::new("mass", &["n", "replicas", "max_sup_drift", "bound"]);
    let mut l1: Vec<Vec<(f64, f64)>> = vec![Vec::new(); times.len()];

    for (i, &n) in nu.sizes.iter().enumerate() {
        let params = base.with_n(n)?;
        check_domination(&params, &gc, &nu.initial, nu.margin)?;
        let sampler = initial_sampler(&params, &gc, &nu.initial)?;
        let blocks = site_blocks(params.sites(), window_len(nu.eps, n));
        let intervals = block_intervals(&blocks, n);
        let replicas = nu.replicas_for(i);
        let spec = EnsembleSpec { replicas, master_seed: nu.seed.wrapping_add(n as u64) };
        let runs: Vec<Result<(Vec<Vec<f64>>, i64)>> = ensemble_map(spec, |_, mut init, dynamics| {
            let mut state = SimState::new(&params, sampler.sample(&mut init), dynamics)?;
            let mut net = NetCount::default();
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                state.run_until(&params, t, &mut net)?;
                let eta = state.eta();
                out.push(block_means(|x| eta.get(x) as f64, &blocks));
            }
            Ok((out, net.sup))
        });
        let mut run = HydroRun { profiles: vec![Vec::with_capacity(replicas); times.len()], sup_net: Vec::new() };
        for r in runs {
            let (profiles, sup) = r?;
            for (j, p) in profiles.into_iter().enumerate() {
                run.profiles[j].push(p);
            }
            run.sup_net.push(sup);
        }

        for (j, &t) in times.iter().enumerate() {
            let frame = frame_at(t);
            let reps = &run.profiles[j];
            let m: Vec<f64> = (0..blocks.len()).map(|b| mean(&reps.iter().map(|r| r[b]).collect::<Vec<_>>())).collect();
            let p: Vec<f64> = intervals.iter().map(|&(a, b)| cell_average(frame, a, b)).collect();
            let width: Vec<f64> = intervals.iter().map(|&(a, b)| b - a).collect();
            let d: f64 = (0..blocks.len()).map(|b| width[b] * (m[b] - p[b]).abs()).sum();
            // Delta-method standard error of the L1 distance.
            let lin: Vec<f64> = reps
                .iter()
                .map(|r| (0..blocks.len()).map(|b| width[b] * (m[b] - p[b]).signum() * r[b]).sum())
                .collect();
            let se = standard_error(&lin);
            l1[j].push((d, se));
            l1_table.push(vec![n as f64, t, replicas as f64, d, se]);
            for (b, &(a, bb)) in intervals.iter().enumerate() {
                profile_table.push(vec![n as f64, t, 0.5 * (a + bb), m[b], p[b]]);
            }
        }

        if neumann {
            let worst = run.sup_net.iter().copied().max().unwrap_or(0) as f64 / n as f64;
            let bound = MASS_DRIFT_CONSTANT / n as f64;
            mass_table.push(vec![n as f64, replicas as f64, worst, bound]);
            report.check(
                &format!("mass_drift_n{n}"),
                worst <= bound,
                format!("sup over [0, {horizon}] of |mass(t) - mass(0)| = {worst:.4e}, bound {bound:.4e}"),
            );
        }
    }

    for (j, &t) in times.iter().enumerate() {
        let d: Vec<f64> = l1[j].iter().map(|v| v.0).collect();
        let se: Vec<f64> = l1[j].iter().map(|v| v.1).collect();
        report.check(
            &format!("l1_decreasing_t{t}"),
            decreasing_within_se(&d, &se),
            format!("N = {:?}: L1 {} (se {})", nu.sizes, fmt_seq(&d), fmt_seq(&se)),
        );
        let last = *d.last().unwrap_or(&f64::NAN);
        report.check(
            &format!("l1_final_t{t}"),
            last <= nu.l1_tolerance,
            format!("L1 at N = {} is {last:.4e}, tolerance {}", nu.sizes.last().copied().unwrap_or(0), nu.l1_tolerance),
        );
    }
    if neumann {
        let worst = pde_mass_drift(&field0, &bc, &gc, nu.cfl, 2000)?;
        report.check(
            "pde_mass",
            worst <= PDE_MASS_TOLERANCE,
            format!("largest per-step change of discrete mass {worst:.3e} over 2000 steps"),
        );
    }
    report.tables.push(l1_table);
    report.tables.push(profile_table);
    if neumann {
        report.tables.push(mass_table);
    }
    Ok(report)
}

/// Largest change of discrete mass over `steps` explicit steps.
pub fn pde_mass_drift(
    field0: &DensityField,
    bc: &BoundarySpec,
    gc: &GrandCanonical,
    cfl: f64,
    steps: usize,
) -> Result<f64> {
    let mut field = field0.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let dt = pde::stable_dt(&field, gc, cfl)?;
        let next = pde::step_explicit(&field, bc, gc, dt)?;
        worst = worst.max((next.mass() - field.mass()).abs());
        field = next;
    }
    Ok(worst)
}

pub fn experiment_martingale(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let base = cfg.model.params()?;
    let gc = grand_canonical(&base);
    let g_test: TestFunction = nu.test_function.parse()?;
    let mut times = nu.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut report = Report::new("martingale");
    let mut table = Table::new("moments", &["n", "t", "replicas", "mean_m", "se_m", "var_m", "mean_qv"]);
    // [size][time] -> (var, mean_qv)
    let mut variances: Vec<Vec<f64>> = Vec::new();
    for (i, &n) in nu.sizes.iter().enumerate() {
        let params = base.with_n(n)?;
        let sampler = initial_sampler(&params, &gc, &nu.initial)?;
        let coeffs = Arc::new(GeneratorCoefficients::new(&params, &g_test));
        let replicas = nu.replicas_for(i);
        let spec = EnsembleSpec { replicas, master_seed: nu.seed.wrapping_add(n as u64) };
        let runs: Vec<Result<Vec<(f64, f64)>>> = ensemble_map(spec, |_, mut init, dynamics| {
            let eta0 = sampler.sample(&mut init);
            let mut tracker = MartingaleTracker::new(Arc::clone(&coeffs), &eta0, 0.0);
            let mut state = SimState::new(&params, eta0, dynamics)?;
            let mut out = Vec::with_capacity(times.len());
            for &t in &times {
                state.run_until(&params, t, &mut tracker)?;
                let rec = tracker.record(t);
                out.push((rec.m, rec.qv_integral));
            }
            Ok(out)
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let mut per_time = Vec::new();
        for (j, &t) in times.iter().enumerate() {
            let m: Vec<f64> = runs.iter().map(|r| r[j].0).collect();
            let qv: Vec<f64> = runs.iter().map(|r| r[j].1).collect();
            let (mm, se, var, mq) = (mean(&m), standard_error(&m), sample_variance(&m), mean(&qv));
            table.push(vec![n as f64, t, replicas as f64, mm, se, var, mq]);
            per_time.push(var);
            if i == 0 {
                report.check(
                    &format!("mean_n{n}_t{t}"),
                    mm.abs() <= 4.0 * se,
                    format!("mean M = {mm:.4e}, standard error {se:.4e}"),
                );
                let ratio = var / mq;
                report.check(
                    &format!("var_qv_n{n}_t{t}"),
                    (0.9..=1.1).contains(&ratio),
                    format!("Var(M)/mean<M> = {ratio:.4} ({var:.4e} / {mq:.4e})"),
                );
            }
        }
        variances.push(per_time);
    }
    for k in 1..nu.sizes.len() {
        let (n0, n1) = (nu.sizes[k - 1], nu.sizes[k]);
        if n1 != 2 * n0 {
            continue;
        }
        for (j, &t) in times.iter().enumerate() {
            let ratio = variances[k][j] / variances[k - 1][j];
            report.check(
                &format!("var_scaling_n{n0}_n{n1}_t{t}"),
                (0.35..=0.65).contains(&ratio),
                format!("Var(M) ratio {ratio:.4}"),
            );
        }
    }
    report.tables.push(table);
    Ok(report)
}

pub fn experiment_replacement(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let base = cfg.model.params()?;
    let gc = Arc::new(grand_canonical(&base));
    let g_test: TestFunction = nu.test_function.parse()?;
    let mut table = Table::new(
        "residuals",
        &["n", "replicas", "r4", "r4_se", "rb_left", "rb_left_se", "rb_right", "rb_right_se"],
    );
    let mut series: [Vec<f64>; 3] = Default::default();
    let mut errors: [Vec<f64>; 3] = Default::default();
    for (i, &n) in nu.sizes.iter().enumerate() {
        let params = base.with_n(n)?;
        let sampler = initial_sampler(&params, &gc, &nu.initial)?;
        let replicas = nu.replicas_for(i);
        let spec = EnsembleSpec { replicas, master_seed: nu.seed.wrapping_add(n as u64) };
        let runs: Vec<Result<[f64; 3]>> = ensemble_map(spec, |_, mut init, dynamics| {
            let eta0 = sampler.sample(&mut init);
            let mut tracker = ReplacementTracker::new(
                &params,
                Arc::clone(&gc),
                &g_test,
                nu.eps,
                TimeWeight::one(),
                TimeWeight::one(),
                &eta0,
                0.0,
            )?;
            let mut state = SimState::new(&params, eta0, dynamics)?;
            state.run_until(&params, nu.horizon, &mut tracker)?;
            let r = tracker.residuals(nu.horizon)?;
            Ok([r.r4.abs(), r.rb_left.abs(), r.rb_right.abs()])
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let mut row = vec![n as f64, replicas as f64];
        for k in 0..3 {
            let col: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            let (m, se) = (mean(&col), standard_error(&col));
            series[k].push(m);
            errors[k].push(se);
            row.extend([m, se]);
        }
        table.push(row);
    }
    let mut report = Report::new("replacement");
    for (k, name) in ["r4", "rb_left", "rb_right"].iter().enumerate() {
        report.check(
            &format!("{name}_decreasing"),
            decreasing_within_se(&series[k], &errors[k]),
            format!("mean |{name}| over N = {:?}: {} (se {})", nu.sizes, fmt_seq(&series[k]), fmt_seq(&errors[k])),
        );
    }
    report.tables.push(table);
    Ok(report)
}

pub fn experiment_attractiveness(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let params = cfg.model.params()?;
    let gc = grand_canonical(&params);
    let lower_sampler = initial_sampler(&params, &gc, &nu.initial)?;
    let upper_sampler = initial_sampler(&params, &gc, &nu.upper_initial)?;
    let spec = EnsembleSpec { replicas: nu.replicas.max(1), master_seed: nu.seed };
    let budget = nu.joint_events;
    let runs: Vec<Result<(u64, Option<String>, f64, f64)>> = ensemble_map(spec, |replica, init, _| {
        // One stream for both draws couples the initial laws by quantiles.
        let lower = lower_sampler.sample(&mut init.clone());
        let mut upper_rng = init;
        let upper = upper_sampler.sample(&mut upper_rng);
        let rng = StreamRng::new(nu.seed, replica as u64, Purpose::Coupling);
        let mut cs = CoupledState::new(&params, lower, upper, rng)?;
        let (mut lo_tot, mut up_tot) = (cs.lower().total() as f64, cs.upper().total() as f64);
        let (mut lo_int, mut up_int) = (0.0, 0.0);
        let mut violation = None;
        while cs.events() < budget {
            let t0 = cs.time();
            match cs.step(&params) {
                Ok(ev) => {
                    let dt = cs.time() - t0;
                    lo_int += lo_tot * dt;
                    up_int += up_tot * dt;
                    lo_tot += ev.lower.map_or(0.0, particle_change);
                    up_tot += ev.upper.map_or(0.0, particle_change);
                }
                Err(Error::Absorbed { .. }) => break,
                Err(Error::OrderingViolated { site }) => {
                    violation = Some(format!("site {site} after {} events", cs.events()));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if violation.is_none() && !cs.is_ordered() {
            violation = Some("final configurations unordered".into());
        }
        let t = cs.time();
        let sites = params.sites() as f64;
        let (lo_avg, up_avg) = if t > 0.0 {
            (lo_int / (t * sites), up_int / (t * sites))
        } else {
            (lo_tot / sites, up_tot / sites)
        };
        Ok((cs.events(), violation, lo_avg, up_avg))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = Report::new("attractiveness");
    let mut table = Table::new("runs", &["replica", "events", "lower_average", "upper_average"]);
    let total: u64 = runs.iter().map(|r| r.0).sum();
    let violations: Vec<&String> = runs.iter().filter_map(|r| r.1.as_ref()).collect();
    for (i, r) in runs.iter().enumerate() {
        table.push(vec![i as f64, r.0 as f64, r.2, r.3]);
    }
    report.check(
        "ordering",
        violations.is_empty(),
        if violations.is_empty() {
            format!("{total} joint events without violation")
        } else {
            format!("violated at {}", violations.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; "))
        },
    );
    let monotone = runs.iter().all(|r| r.2 <= r.3);
    report.check(
        "average_monotone",
        monotone,
        format!(
            "time- and site-averaged occupation lower/upper: {}",
            runs.iter().map(|r| format!("{:.4}/{:.4}", r.2, r.3)).collect::<Vec<_>>().join(", ")
        ),
    );
    report.tables.push(table);
    Ok(report)
}

fn particle_change(ev: Event) -> f64 {
    match ev {
        Event::CreateLeft | Event::CreateRight => 1.0,
        Event::AnnihilateLeft | Event::AnnihilateRight => -1.0,
        Event::BulkJump { .. } => 0.0,
    }
}

pub fn experiment_pde_convergence(cfg: &ExperimentConfig) -> Result<Report> {
    let nu = &cfg.numerics;
    let mut report = Report::new("pde-convergence");

    // Heat equation with no-flux ends: rho = 1 + a exp(-pi^2 t) cos(pi u).
    let heat = GrandCanonical::new(Arc::new(RateFunction::linear()));
    let neumann = BoundarySpec::new(0, 0.0, 0.0, 0.0, 0.0)?;
    let amp = 0.5;
    let t_end = nu.horizon;
    let pi = std::f64::consts::PI;
    let exact = |u: f64| 1.0 + amp * (-pi * pi * t_end).exp() * (pi * u).cos();
    let mut cells = nu.cells.clone();
    cells.sort_unstable();
    let mut table = Table::new("cosine", &["cells", "h", "linf_error", "order"]);
    let mut errors: Vec<f64> = Vec::new();
    for (i, &m) in cells.iter().enumerate() {
        let f0 = DensityField::from_profile(m, |u| 1.0 + amp * (pi * u).cos())?;
        let controls = SolveControls { cfl: nu.cfl, ..SolveControls::default() };
        let sol = pde::solve(&f0, &neumann, &heat, t_end, &controls)?;
        let last = sol.last();
        let err = (0..m).map(|j| (last.rho[j] - exact(last.midpoint(j))).abs()).fold(0.0, f64::max);
        let order = if i == 0 {
            f64::NAN
        } else {
            (errors[i - 1] / err).ln() / (m as f64 / cells[i - 1] as f64).ln()
        };
        errors.push(err);
        table.push(vec![m as f64, last.h(), err, order]);
    }
    let orders: Vec<f64> = table.rows.iter().skip(1).map(|r| r[3]).collect();
    report.check(
        "cosine_order",
        !orders.is_empty() && orders.iter().all(|&o| o >= 1.9),
        format!("L-infinity errors {} over M = {cells:?}, observed orders {}", fmt_seq(&errors), fmt_seq(&orders)),
    );
    let f0 = DensityField::from_profile(cells[0].max(2), |u| 1.0 + amp * (pi * u).cos())?;
    let drift = pde_mass_drift(&f0, &neumann, &heat, nu.cfl, 2000)?;
    report.check(
        "neumann_mass",
        drift <= PDE_MASS_TOLERANCE,
        format!("largest per-step change of discrete mass {drift:.3e}"),
    );
    report.tables.push(table);

    // Robin steady state: Phi(rho) = alpha (2 - u).
    let alpha = cfg.model.alpha;
    let robin_model = ModelConfig { theta: 1.0, beta: 0.0, lambda: 0.0, delta: 1.0, ..cfg.model.clone() };
    let gc = grand_canonical(&robin_model.params()?);
    let robin = BoundarySpec::specialized(1, alpha)?;
    let mut steady = Table::new("robin", &["cells", "h", "max_error", "bound"]);
    let mut ok = true;
    for &m in &nu.steady_cells {
        let f0 = DensityField::from_profile(m, |_| 0.0)?;
        let controls = SolveControls { cfl: nu.cfl, ..SolveControls::default() };
        let sol = pde::solve(&f0, &robin, &gc, nu.steady_horizon, &controls)?;
        let last = sol.last();
        let phi = pde::phi_field(last, &gc)?;
        let err = (0..m)
            .map(|j| (phi[j] - alpha * (2.0 - last.midpoint(j))).abs())
            .fold(0.0, f64::max);
        let bound = 2.0 * alpha * last.h();
        ok &= err <= bound;
        steady.push(vec![m as f64, last.h(), err, bound]);
    }
    report.check(
        "robin_steady_state",
        ok && !nu.steady_cells.is_empty(),
        format!(
            "max |Phi(rho) - alpha(2-u)| at t = {}: {}",
            nu.steady_horizon,
            steady.rows.iter().map(|r| format!("M={}: {:.3e} (bound {:.3e})", r[0], r[2], r[3])).collect::<Vec<_>>().join(", ")
        ),
    );
    report.tables.push(steady);
    Ok(report)
}

/// Balance residuals over a grid of rate families, exponents and boundary
/// types, `samples` configurations in total.
pub fn balance_sweep(samples: usize, seed: u64) -> Result<Report> {
    let families = ["linear", "constant", "capped(3)"];
    let boundaries: [(f64, f64, f64, f64); 2] = [(0.4, 0.0, 0.0, 1.0), (0.3, 0.2, 0.5, 1.0)];
    let sizes = [4usize, 8, 16];
    let combos = families.len() * 2 * boundaries.len() * sizes.len();
    let per = samples.div_ceil(combos);
    let mut rng = StreamRng::new(seed, 0, Purpose::Balance);
    let mut table = Table::new("balance", &["family", "theta", "general", "n", "max_ratio", "max_residual"]);
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (fi, fam) in families.iter().enumerate() {
        for theta in [1.0, 2.0] {
            for (bi, &(a, b, l, d)) in boundaries.iter().enumerate() {
                for &n in &sizes {
                    let model = ModelConfig {
                        beta: b,
                        lambda: l,
                        delta: d,
                        ..ModelConfig::specialized(n, theta, a, fam)
                    };
                    let params = model.params()?;
                    let profile = fugacity_profile(&params)?;
                    let (ratio, res, pass) = balance_check(&params, &profile.values, per, 6, &mut rng)?;
                    ok &= pass;
                    worst = worst.max(ratio);
                    checked += per;
                    table.push(vec![fi as f64, theta, bi as f64, n as f64, ratio, res]);
                }
            }
        }
    }
    let mut report = Report::new("balance-sweep");
    report.check(
        "balance",
        ok,
        format!("{checked} configurations over {combos} models, max |residual|/lambda = {worst:.3e}"),
    );
    report.tables.push(table);
    Ok(report)
}

fn random_test_function<R: Rng>(rng: &mut R) -> TestFunction {
    if rng.gen_bool(0.5) {
        let degree = rng.gen_range(0..=4);
        TestFunction::Polynomial((0..=degree).map(|_| rng.gen_range(-2.0..2.0)).collect())
    } else {
        TestFunction::Sine {
            amp: rng.gen_range(0.1..2.0),
            freq: rng.gen_range(0.5..8.0),
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// Compares the closed-form drift with generator enumeration on random
/// models, configurations and test functions. The error is measured
/// relative to `sum |rate * increment|`, the scale of the enumerated sum.
pub fn drift_oracle_sweep(pairs: usize, seed: u64) -> Result<Report> {
    let mut rng = StreamRng::new(seed, 0, Purpose::Test);
    let families = ["linear", "constant", "capped(3)"];
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let fam = families[rng.gen_range(0..families.len())];
        let n = rng.gen_range(3..40);
        let theta = [1.0, 1.5, 2.0][rng.gen_range(0..3)];
        let model = ModelConfig {
            beta: rng.gen_range(0.0..2.0),
            lambda: rng.gen_range(0.0..2.0),
            delta: rng.gen_range(0.0..2.0),
            ..ModelConfig::specialized(n, theta, rng.gen_range(0.0..2.0), fam)
        };
        let params = model.params()?;
        let eta = random_configuration(&mut rng, params.sites(), 8);
        let g = random_test_function(&mut rng);
        let closed = dynkin_drift(&eta, &g, &params);
        let enumerated = generator_on_pairing(&eta, &g, &params)?;
        let base = crate::observables::empirical_pairing(&eta, &g);
        let mut scale = 0.0;
        for ev in Event::all(params.sites()) {
            let r = event_rate(&eta, ev, &params);
            if r > 0.0 {
                let next = apply_event(&eta, ev)?;
                scale += r * (crate::observables::empirical_pairing(&next, &g) - base).abs();
            }
        }
        let err = (closed - enumerated).abs();
        if err > 0.0 {
            worst = worst.max(err / scale.max(f64::MIN_POSITIVE));
        }
    }
    let mut report = Report::new("drift-oracle");
    report.check(
        "drift",
        worst <= 1e-9,
        format!("{pairs} random (eta, G) pairs, max relative error {worst:.3e}"),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ModelConfig;

    fn small(kind: ExperimentKind, model: ModelConfig) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(kind, model);
        cfg.numerics.seed = 5;
        cfg
    }

    #[test]
    fn occupation_times_match_snapshot_integration() {
        let params = ModelConfig::specialized(6, 1.0, 1.0, "linear").params().unwrap();
        let eta0 = Configuration::from_occupancy(vec![1, 0, 2, 0, 1]);
        let mut state = SimState::new(&params, eta0.clone(), StreamRng::new(1, 0, Purpose::Test)).unwrap();
        let mut occ = OccupationTimes::new(5, 0.0);
        let mut path = vec![(0.0, eta0)];
        let mut rec = |t: f64, ev: Event, eta: &Configuration| {
            occ.on_event(t, ev, eta);
            path.push((t, eta.clone()));
        };
        state.run_until(&params, 0.3, &mut rec).unwrap();
        let avg = occ.averages(state.eta(), 0.3);
        for x in 1..=5 {
            let mut integral = 0.0;
            for k in 0..path.len() {
                let end = path.get(k + 1).map_or(0.3, |p| p.0);
                integral += path[k].1.get(x) as f64 * (end - path[k].0);
            }
            assert!((avg[x - 1] - integral / 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_average_is_exact_for_piecewise_constants() {
        let f = DensityField::new(vec![1.0, 3.0, 5.0, 7.0], 0.0).unwrap();
        assert!((cell_average(&f, 0.0, 1.0) - 4.0).abs() < 1e-15);
        assert!((cell_average(&f, 0.125, 0.375) - 2.0).abs() < 1e-15);
        assert!((cell_average(&f, 0.5, 0.75) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn block_intervals_tile_unit_interval() {
        let blocks = site_blocks(19, 4);
        let iv = block_intervals(&blocks, 20);
        assert_eq!(iv[0].0, 0.0);
        assert_eq!(iv.last().unwrap().1, 1.0);
        for w in iv.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < 1e-15);
        }
    }

    #[test]
    fn decreasing_within_se_tolerates_noise() {
        assert!(decreasing_within_se(&[3.0, 2.0, 1.0], &[0.0; 3]));
        assert!(decreasing_within_se(&[1.0, 1.05], &[0.1, 0.01]));
        assert!(!decreasing_within_se(&[1.0, 1.5], &[0.1, 0.1]));
        assert!(decreasing_within_se(&[0.0, 0.0, 0.0], &[0.0; 3]));
    }

    #[test]
    fn domination_is_enforced() {
        let params = ModelConfig::specialized(50, 1.0, 1.0, "linear").params().unwrap();
        let gc = grand_canonical(&params);
        assert!(check_domination(&params, &gc, &InitialSpec::Constant { value: 0.5 }, 0.1).is_ok());
        assert!(matches!(
            check_domination(&params, &gc, &InitialSpec::Constant { value: 1.5 }, 0.0),
            Err(Error::DominationViolated { .. })
        ));
    }

    #[test]
    fn invariance_without_creation_is_trivial() {
        let mut cfg = small(ExperimentKind::Invariance, ModelConfig::specialized(8, 1.0, 0.0, "linear"));
        cfg.numerics.replicas = 20;
        let r = run_experiment(&cfg).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn oracle_small_sweep() {
        let mut cfg = small(ExperimentKind::Oracle, ModelConfig::specialized(3, 1.0, 0.5, "linear"));
        cfg.numerics.caps = vec![4, 8, 12];
        let r = run_experiment(&cfg).unwrap();
        assert!(r.criterion("tv_decreasing").unwrap().passed, "{r}");
        assert_eq!(r.table("caps").unwrap().rows.len(), 3);
    }

    #[test]
    fn oracle_refuses_large_systems() {
        let mut cfg = small(ExperimentKind::Oracle, ModelConfig::specialized(8, 1.0, 0.5, "linear"));
        cfg.numerics.caps = vec![10];
        assert!(matches!(run_experiment(&cfg), Err(Error::StateSpaceTooLarge { .. })));
    }

    #[test]
    fn hydrodynamic_rejects_undominated_start() {
        let mut cfg = small(ExperimentKind::Hydrodynamic, ModelConfig::specialized(20, 1.0, 1.0, "linear"));
        cfg.numerics.sizes = vec![20];
        cfg.numerics.initial = InitialSpec::Constant { value: 1.5 };
        assert!(matches!(run_experiment(&cfg), Err(Error::DominationViolated { .. })));
    }

    #[test]
    fn drift_and_balance_sweeps_pass() {
        assert!(drift_oracle_sweep(50, 1).unwrap().passed());
        assert!(balance_sweep(200, 1).unwrap().passed());
    }
}
