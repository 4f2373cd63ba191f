use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use zrp_core::harness::{pde_solve, preset, run_experiment, simulate, ExperimentConfig, ExperimentKind, OutputFormat};
use zrp_core::pde::write_solution_csv;
use zrp_core::sim::{write_trajectories_csv, write_trajectories_json};

/// Zero-range process with slow boundary reservoirs: simulation,
/// invariant measures, hydrodynamic PDE and verification experiments.
#[derive(Parser)]
#[command(name = "zrp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Balance identity and chi-squared stationarity test.
    Invariance(Common),
    /// Truncated-chain linear-algebra check of the product measure.
    Oracle(Common),
    /// Time-averaged profile against the hydrostatic limit.
    Hydrostatic(Common),
    /// Empirical profiles against the PDE over a sweep of lattice sizes.
    Hydrodynamic(Common),
    /// Dynkin martingale mean, variance and scaling.
    Martingale(Common),
    /// Replacement-lemma residuals over a sweep of lattice sizes.
    Replacement(Common),
    /// Ordering of coupled runs.
    Attractiveness(Common),
    /// Convergence order and steady state of the finite-volume solver.
    PdeConvergence(Common),
    /// Solves the PDE and writes `t,u,rho` frames.
    PdeSolve(Common),
    /// Runs an ensemble and writes its snapshots.
    Simulate(Common),
    /// Prints the built-in configuration of an experiment as TOML.
    Preset { experiment: String },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; the built-in preset is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output format: csv or json.
    #[arg(long)]
    format: Option<OutputFormat>,
}

impl Common {
    fn load(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => preset(kind),
        };
        cfg.experiment = kind;
        if let Some(seed) = self.seed {
            cfg.numerics.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
        if let Some(format) = self.format {
            cfg.output.format = format;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn experiment(common: &Common, kind: ExperimentKind) -> Result<bool> {
    let cfg = common.load(kind)?;
    let report = run_experiment(&cfg)?;
    print!("{report}");
    for path in report.write(&cfg.output.dir, cfg.output.format)? {
        println!("wrote {}", path.display());
    }
    Ok(report.passed())
}

fn create(dir: &std::path::Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok((path, BufWriter::new(file)))
}

fn run(cli: Cli) -> Result<bool> {
    use ExperimentKind as K;
    match cli.command {
        Command::Invariance(c) => experiment(&c, K::Invariance),
        Command::Oracle(c) => experiment(&c, K::Oracle),
        Command::Hydrostatic(c) => experiment(&c, K::Hydrostatic),
        Command::Hydrodynamic(c) => experiment(&c, K::Hydrodynamic),
        Command::Martingale(c) => experiment(&c, K::Martingale),
        Command::Replacement(c) => experiment(&c, K::Replacement),
        Command::Attractiveness(c) => experiment(&c, K::Attractiveness),
        Command::PdeConvergence(c) => experiment(&c, K::PdeConvergence),
        Command::PdeSolve(c) => {
            let cfg = c.load(K::Hydrodynamic)?;
            let solution = pde_solve(&cfg)?;
            let (path, out) = create(&cfg.output.dir, "pde_solution.csv")?;
            write_solution_csv(out, &solution.frames)?;
            println!("{} steps, wrote {}", solution.steps, path.display());
            Ok(true)
        }
        Command::Simulate(c) => {
            let cfg = c.load(K::Hydrodynamic)?;
            let trajectories = simulate(&cfg)?;
            let indexed: Vec<_> = trajectories.iter().enumerate().collect();
            let path = match cfg.output.format {
                OutputFormat::Csv => {
                    let (path, out) = create(&cfg.output.dir, "trajectories.csv")?;
                    write_trajectories_csv(out, &indexed)?;
                    path
                }
                OutputFormat::Json => {
                    let (path, out) = create(&cfg.output.dir, "trajectories.json")?;
                    write_trajectories_json(out, &indexed)?;
                    path
                }
            };
            println!("{} replicas, wrote {}", trajectories.len(), path.display());
            Ok(true)
        }
        Command::Preset { experiment } => {
            let kind: ExperimentKind = experiment.parse()?;
            print!("{}", preset(kind).to_toml_string()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
