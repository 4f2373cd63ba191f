use thiserror::Error;

/// Errors raised across the simulator, the analytic machinery and the solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("g({index}) = 0 inside the factorial product g(1)...g({k})")]
    ZeroRateInFactorial { k: u64, index: u64 },

    #[error("fugacity {phi} is outside [0, {phi_star})")]
    FugacityOutOfRange { phi: f64, phi_star: f64 },

    #[error("series at fugacity {phi} did not certify a geometric tail within {max_terms} terms")]
    SeriesNotConverged { phi: f64, max_terms: usize },

    #[error("density {rho} is not reached below fugacity {phi_max}")]
    DensityUnreachable { rho: f64, phi_max: f64 },

    #[error("fugacity {value} at site {site} reaches the radius of convergence {phi_star}")]
    FugacityExceedsRadius {
        site: usize,
        value: f64,
        phi_star: f64,
    },

    #[error("rate function is not monotone; phi_star must be supplied explicitly")]
    PhiStarRequired,

    #[error("event {0} has zero rate in the current configuration")]
    ImpossibleEvent(String),

    #[error("occupancy overflow at site {site}")]
    OccupancyOverflow { site: usize },

    #[error("total jump rate is zero at t = {t}")]
    Absorbed { t: f64 },

    #[error("basic coupling requires a non-decreasing rate function")]
    CouplingRequiresMonotoneRates,

    #[error("coupled configurations lost their ordering at site {site}")]
    OrderingViolated { site: usize },

    #[error("a dense (every-event) trajectory is required")]
    DenseTrajectoryRequired,

    #[error("block window [{lo}, {hi}] leaves the lattice 1..={last}")]
    WindowOutOfRange { lo: i64, hi: i64, last: usize },

    #[error("explicit step failed to stay nonnegative and finite at t = {t} after {retries} halvings")]
    StabilityFailure { t: f64, retries: u32 },

    #[error("state space of {states} states exceeds the cap of {cap}")]
    StateSpaceTooLarge { states: usize, cap: usize },

    #[error("initial profile exceeds the hydrostatic profile minus margin at u = {u}")]
    DominationViolated { u: f64 },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
