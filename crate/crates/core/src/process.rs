//! Configurations, events and the microscopic jump rates of the
//! boundary-driven zero-range process on `{1, ..., N-1}`.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::RateFunction;

/// Occupation numbers `eta(x)` on sites `1..=N-1`, with a cached total.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    occupancy: Vec<u32>,
    total: u64,
}

impl Configuration {
    /// Empty configuration on `sites = N - 1` sites.
    pub fn empty(sites: usize) -> Self {
        Configuration {
            occupancy: vec![0; sites],
            total: 0,
        }
    }

    /// Builds a configuration from occupancies listed for sites `1..=N-1`.
    pub fn from_occupancy(occupancy: Vec<u32>) -> Self {
        let total = occupancy.iter().map(|&v| v as u64).sum();
        Configuration { occupancy, total }
    }

    /// Number of sites, `N - 1`.
    #[inline]
    pub fn sites(&self) -> usize {
        self.occupancy.len()
    }

    /// `eta(x)` for `x` in `1..=N-1`.
    #[inline]
    pub fn get(&self, x: usize) -> u32 {
        self.occupancy[x - 1]
    }

    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.occupancy
    }

    /// Sites `x` paired with `eta(x)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.occupancy.iter().enumerate().map(|(i, &v)| (i + 1, v))
    }

    pub(crate) fn increment(&mut self, x: usize) -> Result<()> {
        let slot = &mut self.occupancy[x - 1];
        *slot = slot
            .checked_add(1)
            .ok_or(Error::OccupancyOverflow { site: x })?;
        self.total += 1;
        Ok(())
    }

    pub(crate) fn decrement(&mut self, x: usize) -> Result<()> {
        let slot = &mut self.occupancy[x - 1];
        if *slot == 0 {
            return Err(Error::ImpossibleEvent(format!("removal from empty site {x}")));
        }
        *slot -= 1;
        self.total -= 1;
        Ok(())
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.sites() == other.sites()
            && self
                .occupancy
                .iter()
                .zip(&other.occupancy)
                .all(|(a, b)| a <= b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.occupancy).expect("vector of integers serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let occ: Vec<u32> = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self::from_occupancy(occ))
    }

    /// Binary layout: little-endian `u64` site count, then one little-endian
    /// `u32` per site.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.occupancy.len() as u64).to_le_bytes())?;
        for v in &self.occupancy {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)?;
        let n = u64::from_le_bytes(head) as usize;
        let mut occ = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            occ.push(u32::from_le_bytes(buf));
        }
        Ok(Self::from_occupancy(occ))
    }
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.occupancy.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vec::<u32>::deserialize(d).map(Configuration::from_occupancy)
    }
}

/// Lattice size, boundary strength and reservoir rates.
///
/// The specialized model (insertion at site 1, removal at site `N-1`) is
/// `delta = 1, lambda = beta = 0`.
#[derive(Debug, Clone)]
pub struct ModelParams {
    n: usize,
    theta: f64,
    alpha: f64,
    beta: f64,
    lambda: f64,
    delta: f64,
    g: Arc<RateFunction>,
    diffusive: bool,
    boundary_scale: f64,
}

impl ModelParams {
    /// Specialized model with diffusive time scaling.
    pub fn new(n: usize, theta: f64, alpha: f64, g: Arc<RateFunction>) -> Result<Self> {
        Self::general(n, theta, alpha, 0.0, 0.0, 1.0, g)
    }

    /// General reservoirs: creation `alpha` (left) / `beta` (right), removal
    /// `lambda g(eta(1))` (left) / `delta g(eta(N-1))` (right), all scaled by
    /// `N^-theta`.
    pub fn general(
        n: usize,
        theta: f64,
        alpha: f64,
        beta: f64,
        lambda: f64,
        delta: f64,
        g: Arc<RateFunction>,
    ) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParams(format!("N = {n}, need N >= 3")));
        }
        if !(theta >= 1.0) || !theta.is_finite() {
            return Err(Error::InvalidParams(format!("theta = {theta}, need theta >= 1")));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta), ("lambda", lambda), ("delta", delta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(ModelParams {
            n,
            theta,
            alpha,
            beta,
            lambda,
            delta,
            g,
            diffusive: true,
            boundary_scale: (n as f64).powf(-theta),
        })
    }

    pub fn with_diffusive(mut self, diffusive: bool) -> Self {
        self.diffusive = diffusive;
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }
    /// Number of lattice sites, `N - 1`.
    #[inline]
    pub fn sites(&self) -> usize {
        self.n - 1
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn g(&self) -> &RateFunction {
        &self.g
    }
    pub fn g_handle(&self) -> Arc<RateFunction> {
        Arc::clone(&self.g)
    }
    pub fn diffusive(&self) -> bool {
        self.diffusive
    }

    /// `N^-theta`.
    #[inline]
    pub fn boundary_scale(&self) -> f64 {
        self.boundary_scale
    }

    /// `N^2` when diffusive, else 1.
    #[inline]
    pub fn speed(&self) -> f64 {
        if self.diffusive {
            (self.n * self.n) as f64
        } else {
            1.0
        }
    }

    /// True for `delta = 1, lambda = beta = 0`.
    pub fn is_specialized(&self) -> bool {
        self.delta == 1.0 && self.lambda == 0.0 && self.beta == 0.0
    }

    /// `kappa = 1` iff `theta = 1`.
    pub fn kappa(&self) -> u8 {
        if self.theta == 1.0 {
            1
        } else {
            0
        }
    }

    /// The same model on a different lattice.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Ok(Self::general(
            n,
            self.theta,
            self.alpha,
            self.beta,
            self.lambda,
            self.delta,
            self.g_handle(),
        )?
        .with_diffusive(self.diffusive))
    }
}

/// Jump direction of a bulk move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    #[inline]
    pub fn offset(self) -> isize {
        match self {
            Direction::Left => -1,
            Direction::Right => 1,
        }
    }
}

/// A single transition of the process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    /// A particle leaves `x` for `x + dir`.
    BulkJump { x: usize, dir: Direction },
    CreateLeft,
    CreateRight,
    AnnihilateLeft,
    AnnihilateRight,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::BulkJump { x, dir } => {
                let y = *x as isize + dir.offset();
                write!(f, "jump {x}->{y}")
            }
            Event::CreateLeft => write!(f, "create-left"),
            Event::CreateRight => write!(f, "create-right"),
            Event::AnnihilateLeft => write!(f, "annihilate-left"),
            Event::AnnihilateRight => write!(f, "annihilate-right"),
        }
    }
}

impl Event {
    /// Whether the event is meaningful on `sites = N - 1` sites.
    pub fn is_well_formed(&self, sites: usize) -> bool {
        match *self {
            Event::BulkJump { x, dir } => {
                let y = x as isize + dir.offset();
                x >= 1 && x <= sites && y >= 1 && y <= sites as isize
            }
            _ => true,
        }
    }

    /// Every well-formed event on `sites` sites (bulk jumps first).
    pub fn all(sites: usize) -> Vec<Event> {
        let mut out = Vec::with_capacity(2 * sites + 4);
        for x in 1..=sites {
            for dir in [Direction::Left, Direction::Right] {
                let ev = Event::BulkJump { x, dir };
                if ev.is_well_formed(sites) {
                    out.push(ev);
                }
            }
        }
        out.extend([
            Event::CreateLeft,
            Event::CreateRight,
            Event::AnnihilateLeft,
            Event::AnnihilateRight,
        ]);
        out
    }

    /// Sites whose occupancy the event changes, as `(site, +1 | -1)`.
    pub fn changes(&self, sites: usize) -> ([(usize, i32); 2], usize) {
        match *self {
            Event::BulkJump { x, dir } => {
                let y = (x as isize + dir.offset()) as usize;
                ([(x, -1), (y, 1)], 2)
            }
            Event::CreateLeft => ([(1, 1), (0, 0)], 1),
            Event::CreateRight => ([(sites, 1), (0, 0)], 1),
            Event::AnnihilateLeft => ([(1, -1), (0, 0)], 1),
            Event::AnnihilateRight => ([(sites, -1), (0, 0)], 1),
        }
    }
}

/// Rate of `ev` from `eta`, including the `N^2` speed-up when diffusive.
pub fn event_rate(eta: &Configuration, ev: Event, params: &ModelParams) -> f64 {
    let sites = params.sites();
    let g = params.g();
    let b = params.boundary_scale();
    let base = match ev {
        Event::BulkJump { x, .. } => {
            if !ev.is_well_formed(sites) {
                return 0.0;
            }
            g.eval(eta.get(x) as u64)
        }
        Event::CreateLeft => params.alpha() * b,
        Event::CreateRight => params.beta() * b,
        Event::AnnihilateLeft => params.lambda() * g.eval(eta.get(1) as u64) * b,
        Event::AnnihilateRight => params.delta() * g.eval(eta.get(sites) as u64) * b,
    };
    base * params.speed()
}

/// Applies `ev` in place.
pub fn apply_event_mut(eta: &mut Configuration, ev: Event) -> Result<()> {
    let sites = eta.sites();
    match ev {
        Event::BulkJump { x, dir } => {
            if !ev.is_well_formed(sites) {
                return Err(Error::ImpossibleEvent(ev.to_string()));
            }
            if eta.get(x) == 0 {
                return Err(Error::ImpossibleEvent(ev.to_string()));
            }
            let y = (x as isize + dir.offset()) as usize;
            eta.increment(y)?;
            eta.decrement(x)
        }
        Event::CreateLeft => eta.increment(1),
        Event::CreateRight => eta.increment(sites),
        Event::AnnihilateLeft => eta
            .decrement(1)
            .map_err(|_| Error::ImpossibleEvent(ev.to_string())),
        Event::AnnihilateRight => eta
            .decrement(sites)
            .map_err(|_| Error::ImpossibleEvent(ev.to_string())),
    }
}

/// Returns the configuration after `ev`.
pub fn apply_event(eta: &Configuration, ev: Event) -> Result<Configuration> {
    let mut next = eta.clone();
    apply_event_mut(&mut next, ev)?;
    Ok(next)
}

/// Sum of all event rates out of `eta`.
pub fn total_rate(eta: &Configuration, params: &ModelParams) -> f64 {
    let sites = params.sites();
    let g = params.g();
    let b = params.boundary_scale();
    let mut bulk = 0.0;
    for (x, k) in eta.iter() {
        let mult = if x == 1 || x == sites { 1.0 } else { 2.0 };
        bulk += mult * g.eval(k as u64);
    }
    let boundary = b
        * (params.alpha()
            + params.beta()
            + params.lambda() * g.eval(eta.get(1) as u64)
            + params.delta() * g.eval(eta.get(sites) as u64));
    (bulk + boundary) * params.speed()
}
