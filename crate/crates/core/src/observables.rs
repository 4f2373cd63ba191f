//! Functionals of configurations and trajectories: empirical pairings,
//! discrete calculus, Dynkin martingales, block averages and replacement
//! residuals.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::GrandCanonical;
use crate::process::{apply_event, event_rate, Configuration, Event, ModelParams};
use crate::rates::RateFunction;
use crate::sim::{DenseTrajectory, Observer};

/// Smooth test function on `[0, 1]` with its first two derivatives.
#[derive(Clone)]
pub enum TestFunction {
    /// `sum_k c[k] u^k`.
    Polynomial(Vec<f64>),
    /// `amp * sin(freq * u + phase)`.
    Sine { amp: f64, freq: f64, phase: f64 },
    /// Cubic Hermite interpolation of user-supplied values and slopes.
    Table(Arc<HermiteTable>),
    /// Closures for value and derivatives.
    Custom(Arc<CustomFunction>),
}

pub struct CustomFunction {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d1: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d2: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TestFunction({self})")
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
            TestFunction::Sine { amp, freq, phase } => write!(f, "sin:{freq},{phase},{amp}"),
            TestFunction::Table(t) => write!(f, "table[{} knots]", t.u.len()),
            TestFunction::Custom(c) => write!(f, "{}", c.name),
        }
    }
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        TestFunction::Polynomial(vec![c])
    }

    /// `u (1 - u)`.
    pub fn bump() -> Self {
        TestFunction::Polynomial(vec![0.0, 1.0, -1.0])
    }

    pub fn custom(
        name: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TestFunction::Custom(Arc::new(CustomFunction {
            name: name.to_string(),
            f: Box::new(f),
            d1: Box::new(d1),
            d2: Box::new(d2),
        }))
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            TestFunction::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &a| acc * u + a),
            TestFunction::Sine { amp, freq, phase } => amp * (freq * u + phase).sin(),
            TestFunction::Table(t) => t.eval(u).0,
            TestFunction::Custom(c) => (c.f)(u),
        }
    }

    pub fn d1(&self, u: f64) -> f64 {
        match self {
            TestFunction::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &a)| acc * u + k as f64 * a),
            TestFunction::Sine { amp, freq, phase } => amp * freq * (freq * u + phase).cos(),
            TestFunction::Table(t) => t.eval(u).1,
            TestFunction::Custom(c) => (c.d1)(u),
        }
    }

    pub fn d2(&self, u: f64) -> f64 {
        match self {
            TestFunction::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, &a)| acc * u + (k * (k - 1)) as f64 * a),
            TestFunction::Sine { amp, freq, phase } => -amp * freq * freq * (freq * u + phase).sin(),
            TestFunction::Table(t) => t.eval(u).2,
            TestFunction::Custom(c) => (c.d2)(u),
        }
    }

    /// Largest disagreement between the supplied derivatives and central
    /// differences on a uniform probe grid in `(0, 1)`, relative to
    /// `max(1, |derivative|)`.
    pub fn derivative_defect(&self, probes: usize) -> f64 {
        let h = 1e-4;
        let knots: &[f64] = match self {
            TestFunction::Table(t) => &t.u,
            _ => &[],
        };
        let mut worst: f64 = 0.0;
        for i in 1..=probes {
            let u = i as f64 / (probes + 1) as f64;
            if knots.iter().any(|&k| (k - u).abs() <= 2.0 * h) {
                continue;
            }
            let fd1 = (self.eval(u + h) - self.eval(u - h)) / (2.0 * h);
            let fd2 = (self.d1(u + h) - self.d1(u - h)) / (2.0 * h);
            let e1 = (fd1 - self.d1(u)).abs() / self.d1(u).abs().max(1.0);
            let e2 = (fd2 - self.d2(u)).abs() / self.d2(u).abs().max(1.0);
            worst = worst.max(e1).max(e2);
        }
        worst
    }

    /// Loads a table from CSV with header `u,g,dg`.
    pub fn from_table_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let (mut u, mut v, mut dv) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Config(format!("table row has fewer than {} columns", i + 1)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(e.to_string()))
            };
            u.push(num(0)?);
            v.push(num(1)?);
            dv.push(num(2)?);
        }
        Ok(TestFunction::Table(Arc::new(HermiteTable::new(u, v, dv)?)))
    }
}

/// Registry names: `one`, `u`, `u2`, `u(1-u)`, `poly:c0,c1,...`,
/// `sin:freq,phase[,amp]`, `cos:freq,phase[,amp]`.
impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let nums = |body: &str| -> Result<Vec<f64>> {
            body.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad number '{p}' in test function '{s}'")))
                })
                .collect()
        };
        match s {
            "one" => return Ok(TestFunction::constant(1.0)),
            "u" => return Ok(TestFunction::Polynomial(vec![0.0, 1.0])),
            "u2" | "u^2" => return Ok(TestFunction::Polynomial(vec![0.0, 0.0, 1.0])),
            "u(1-u)" | "bump" => return Ok(TestFunction::bump()),
            _ => {}
        }
        if let Some(body) = s.strip_prefix("poly:") {
            return Ok(TestFunction::Polynomial(nums(body)?));
        }
        for (prefix, shift) in [("sin:", 0.0), ("cos:", std::f64::consts::FRAC_PI_2)] {
            if let Some(body) = s.strip_prefix(prefix) {
                let v = nums(body)?;
                if v.len() < 2 || v.len() > 3 {
                    return Err(Error::Config(format!("'{s}' needs freq,phase[,amp]")));
                }
                return Ok(TestFunction::Sine {
                    freq: v[0],
                    phase: v[1] + shift,
                    amp: v.get(2).copied().unwrap_or(1.0),
                });
            }
        }
        Err(Error::Config(format!("unknown test function '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTable {
    u: Vec<f64>,
    v: Vec<f64>,
    dv: Vec<f64>,
}

impl HermiteTable {
    pub fn new(u: Vec<f64>, v: Vec<f64>, dv: Vec<f64>) -> Result<Self> {
        if u.len() < 2 || u.len() != v.len() || u.len() != dv.len() {
            return Err(Error::Config(
                "table needs at least two rows of equal length".into(),
            ));
        }
        if u.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("table abscissae must be strictly increasing".into()));
        }
        Ok(HermiteTable { u, v, dv })
    }

    /// Value, first and second derivative.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.u.len();
        let i = self.u.partition_point(|&k| k <= x).clamp(1, n - 1) - 1;
        let (x0, x1) = (self.u[i], self.u[i + 1]);
        let h = x1 - x0;
        let s = (x - x0) / h;
        let (p0, p1, m0, m1) = (self.v[i], self.v[i + 1], self.dv[i] * h, self.dv[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        let val = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1;
        let d1 = ((6.0 * s2 - 6.0 * s) * p0
            + (3.0 * s2 - 4.0 * s + 1.0) * m0
            + (-6.0 * s2 + 6.0 * s) * p1
            + (3.0 * s2 - 2.0 * s) * m1)
            / h;
        let d2 = ((12.0 * s - 6.0) * p0
            + (6.0 * s - 4.0) * m0
            + (-12.0 * s + 6.0) * p1
            + (6.0 * s - 2.0) * m1)
            / (h * h);
        (val, d1, d2)
    }
}

/// `G(s, u) = exp(rate * s) H(u)`; `rate = 0` is time independent.
#[derive(Debug, Clone)]
pub struct SpaceTimeFunction {
    pub space: TestFunction,
    pub rate: f64,
}

impl SpaceTimeFunction {
    pub fn stationary(space: TestFunction) -> Self {
        SpaceTimeFunction { space, rate: 0.0 }
    }
    fn factor(&self, s: f64) -> f64 {
        if self.rate == 0.0 {
            1.0
        } else {
            (self.rate * s).exp()
        }
    }
    pub fn eval(&self, s: f64, u: f64) -> f64 {
        self.factor(s) * self.space.eval(u)
    }
    pub fn d_s(&self, s: f64, u: f64) -> f64 {
        self.rate * self.eval(s, u)
    }
    pub fn d_u(&self, s: f64, u: f64) -> f64 {
        self.factor(s) * self.space.d1(u)
    }
    pub fn d_uu(&self, s: f64, u: f64) -> f64 {
        self.factor(s) * self.space.d2(u)
    }
}

/// `<pi^N, G> = (1/N) sum_x G(x/N) eta(x)`.
pub fn empirical_pairing(eta: &Configuration, g: &TestFunction) -> f64 {
    let n = (eta.sites() + 1) as f64;
    eta.iter().map(|(x, k)| g.eval(x as f64 / n) * k as f64).sum::<f64>() / n
}

/// Discrete Laplacian and one-sided gradients at `x / N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteOps {
    pub laplacian: f64,
    pub grad_plus: f64,
    pub grad_minus: f64,
}

pub fn discrete_ops(g: &TestFunction, n: usize, x: usize) -> DiscreteOps {
    let nf = n as f64;
    let at = |y: f64| g.eval(y / nf);
    let (gm, g0, gp) = (at(x as f64 - 1.0), at(x as f64), at(x as f64 + 1.0));
    DiscreteOps {
        laplacian: nf * nf * (gp + gm - 2.0 * g0),
        grad_plus: nf * (gp - g0),
        grad_minus: nf * (g0 - gm),
    }
}

/// The generator applied to `<pi^N, G>`, written with the discrete
/// operators: bulk Laplacian term, boundary gradients and reservoir flux.
pub fn dynkin_drift(eta: &Configuration, g_test: &TestFunction, params: &ModelParams) -> f64 {
    let n = params.n();
    let nf = n as f64;
    let last = n - 1;
    let g = params.g();
    let gx = |x: usize| g.eval(eta.get(x) as u64);
    let at = |x: usize| g_test.eval(x as f64 / nf);
    let bulk: f64 = (2..=n.saturating_sub(2))
        .map(|x| gx(x) * discrete_ops(g_test, n, x).laplacian)
        .sum::<f64>()
        / nf;
    let gradients = gx(1) * discrete_ops(g_test, n, 1).grad_plus
        - gx(last) * discrete_ops(g_test, n, last).grad_minus;
    let reservoirs = nf.powf(1.0 - params.theta())
        * (params.alpha() * at(1) + params.beta() * at(last)
            - params.lambda() * gx(1) * at(1)
            - params.delta() * gx(last) * at(last));
    (bulk + gradients + reservoirs) * params.speed() / (nf * nf)
}

/// `sum_ev rate(ev) [f(eta^ev) - f(eta)]` for `f = <pi^N, G>`, by listing
/// every event.
pub fn generator_on_pairing(eta: &Configuration, g_test: &TestFunction, params: &ModelParams) -> Result<f64> {
    let f0 = empirical_pairing(eta, g_test);
    let mut acc = 0.0;
    for ev in Event::all(eta.sites()) {
        let r = event_rate(eta, ev, params);
        if r > 0.0 {
            acc += r * (empirical_pairing(&apply_event(eta, ev)?, g_test) - f0);
        }
    }
    Ok(acc)
}

/// The same drift with continuum derivatives in place of discrete ones and
/// boundary test values at `0` and `1`.
pub fn continuum_drift(eta: &Configuration, g_test: &TestFunction, params: &ModelParams) -> f64 {
    let n = params.n();
    let nf = n as f64;
    let last = n - 1;
    let g = params.g();
    let gx = |x: usize| g.eval(eta.get(x) as u64);
    let bulk: f64 = (2..=n.saturating_sub(2))
        .map(|x| gx(x) * g_test.d2(x as f64 / nf))
        .sum::<f64>()
        / nf;
    let gradients = gx(1) * g_test.d1(0.0) - gx(last) * g_test.d1(1.0);
    let reservoirs = nf.powf(1.0 - params.theta())
        * (params.alpha() * g_test.eval(0.0) + params.beta() * g_test.eval(1.0)
            - params.lambda() * gx(1) * g_test.eval(0.0)
            - params.delta() * gx(last) * g_test.eval(1.0));
    (bulk + gradients + reservoirs) * params.speed() / (nf * nf)
}

/// Taylor remainder: exact drift minus its continuum-derivative form.
pub fn taylor_remainder(eta: &Configuration, g_test: &TestFunction, params: &ModelParams) -> f64 {
    dynkin_drift(eta, g_test, params) - continuum_drift(eta, g_test, params)
}

/// Per-site coefficients such that the drift equals
/// `sum_x drift[x] g(eta(x)) + drift_const` and the quadratic-variation
/// integrand `B^N` equals `sum_x qv[x] g(eta(x)) + qv_const`.
#[derive(Debug, Clone)]
pub struct GeneratorCoefficients {
    pairing: Vec<f64>,
    drift: Vec<f64>,
    drift_const: f64,
    qv: Vec<f64>,
    qv_const: f64,
    g: Arc<RateFunction>,
}

impl GeneratorCoefficients {
    pub fn new(params: &ModelParams, g_test: &TestFunction) -> Self {
        let n = params.n();
        let sites = params.sites();
        let speed = params.speed();
        let sb = speed * params.boundary_scale();
        // Index 0 is unused so that vectors are addressed by site.
        let w: Vec<f64> = (0..=sites).map(|x| g_test.eval(x as f64 / n as f64) / n as f64).collect();
        let mut drift = vec![0.0; sites + 1];
        let mut qv = vec![0.0; sites + 1];
        for x in 1..=sites {
            for y in [x.wrapping_sub(1), x + 1] {
                if (1..=sites).contains(&y) {
                    let d = w[y] - w[x];
                    drift[x] += speed * d;
                    qv[x] += speed * d * d;
                }
            }
        }
        drift[1] -= sb * params.lambda() * w[1];
        qv[1] += sb * params.lambda() * w[1] * w[1];
        drift[sites] -= sb * params.delta() * w[sites];
        qv[sites] += sb * params.delta() * w[sites] * w[sites];
        GeneratorCoefficients {
            drift_const: sb * (params.alpha() * w[1] + params.beta() * w[sites]),
            qv_const: sb * (params.alpha() * w[1] * w[1] + params.beta() * w[sites] * w[sites]),
            pairing: w,
            drift,
            qv,
            g: params.g_handle(),
        }
    }

    pub fn pairing(&self, eta: &Configuration) -> f64 {
        eta.iter().map(|(x, k)| self.pairing[x] * k as f64).sum()
    }

    pub fn drift(&self, eta: &Configuration) -> f64 {
        self.drift_const
            + eta
                .iter()
                .map(|(x, k)| self.drift[x] * self.g.eval(k as u64))
                .sum::<f64>()
    }

    /// `B^N(eta)`, the rate of growth of the predictable quadratic variation.
    pub fn quadratic_variation(&self, eta: &Configuration) -> f64 {
        self.qv_const
            + eta
                .iter()
                .map(|(x, k)| self.qv[x] * self.g.eval(k as u64))
                .sum::<f64>()
    }
}

/// `B^N` by enumeration: `sum_ev rate(ev) [f(eta^ev) - f(eta)]^2`.
pub fn quadratic_variation_enumerated(
    eta: &Configuration,
    g_test: &TestFunction,
    params: &ModelParams,
) -> Result<f64> {
    let f0 = empirical_pairing(eta, g_test);
    let mut acc = 0.0;
    for ev in Event::all(eta.sites()) {
        let r = event_rate(eta, ev, params);
        if r > 0.0 {
            let d = empirical_pairing(&apply_event(eta, ev)?, g_test) - f0;
            acc += r * d * d;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleRecord {
    pub t: f64,
    pub m: f64,
    pub qv_integral: f64,
}

const FULL_REFRESH_EVERY: u64 = 1 << 16;

/// Online Dynkin martingale: exact time integrals of the piecewise-constant
/// drift and `B^N` between events.
#[derive(Debug, Clone)]
pub struct MartingaleTracker {
    coeffs: Arc<GeneratorCoefficients>,
    f0: f64,
    f: f64,
    drift: f64,
    qv: f64,
    int_drift: f64,
    int_qv: f64,
    last_t: f64,
    events: u64,
}

impl MartingaleTracker {
    pub fn new(coeffs: Arc<GeneratorCoefficients>, eta0: &Configuration, t0: f64) -> Self {
        let f = coeffs.pairing(eta0);
        MartingaleTracker {
            drift: coeffs.drift(eta0),
            qv: coeffs.quadratic_variation(eta0),
            coeffs,
            f0: f,
            f,
            int_drift: 0.0,
            int_qv: 0.0,
            last_t: t0,
            events: 0,
        }
    }

    /// Value at time `t`, which must not precede the last event seen.
    pub fn record(&self, t: f64) -> MartingaleRecord {
        let dt = (t - self.last_t).max(0.0);
        MartingaleRecord {
            t,
            m: self.f - self.f0 - (self.int_drift + self.drift * dt),
            qv_integral: self.int_qv + self.qv * dt,
        }
    }
}

impl Observer for MartingaleTracker {
    fn on_event(&mut self, t: f64, ev: Event, eta: &Configuration) {
        let dt = t - self.last_t;
        self.int_drift += self.drift * dt;
        self.int_qv += self.qv * dt;
        self.last_t = t;
        self.events += 1;
        if self.events % FULL_REFRESH_EVERY == 0 {
            self.f = self.coeffs.pairing(eta);
            self.drift = self.coeffs.drift(eta);
            self.qv = self.coeffs.quadratic_variation(eta);
            return;
        }
        let c = &self.coeffs;
        let (changes, count) = ev.changes(eta.sites());
        for &(x, d) in &changes[..count] {
            let new = eta.get(x) as u64;
            let old = (new as i64 - d as i64) as u64;
            let dg = c.g.eval(new) - c.g.eval(old);
            self.f += c.pairing[x] * d as f64;
            self.drift += c.drift[x] * dg;
            self.qv += c.qv[x] * dg;
        }
    }
}

/// Martingale records at the requested times along a dense trajectory.
pub fn martingale_track(
    traj: &DenseTrajectory,
    g_test: &TestFunction,
    params: &ModelParams,
    times: &[f64],
) -> Result<Vec<MartingaleRecord>> {
    if times.iter().any(|&t| t < 0.0 || t > traj.horizon) {
        return Err(Error::InvalidParams(format!(
            "record times must lie in [0, {}]",
            traj.horizon
        )));
    }
    let coeffs = Arc::new(GeneratorCoefficients::new(params, g_test));
    let mut tracker = MartingaleTracker::new(coeffs, &traj.initial, 0.0);
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out = vec![MartingaleRecord { t: 0.0, m: 0.0, qv_integral: 0.0 }; times.len()];
    let mut next = 0;
    let mut eta = traj.initial.clone();
    for &(te, ev) in &traj.events {
        while next < order.len() && times[order[next]] < te {
            out[order[next]] = tracker.record(times[order[next]]);
            next += 1;
        }
        crate::process::apply_event_mut(&mut eta, ev)?;
        tracker.on_event(te, ev, &eta);
    }
    while next < order.len() {
        out[order[next]] = tracker.record(times[order[next]]);
        next += 1;
    }
    Ok(out)
}

/// Window length `floor(eps N)`, guarding against representation error in
/// the product.
pub fn window_len(eps: f64, n: usize) -> usize {
    (eps * n as f64 + 1e-9).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSide {
    /// Sites `x+1 ..= x+w`.
    Forward,
    /// Sites `x-w ..= x-1`.
    Backward,
}

fn block_range(sites: usize, x: usize, w: usize, side: BlockSide) -> Result<(usize, usize)> {
    let (lo, hi) = match side {
        BlockSide::Forward => (x as i64 + 1, x as i64 + w as i64),
        BlockSide::Backward => (x as i64 - w as i64, x as i64 - 1),
    };
    if w == 0 || lo < 1 || hi > sites as i64 {
        return Err(Error::WindowOutOfRange { lo, hi, last: sites });
    }
    Ok((lo as usize, hi as usize))
}

/// Mean occupancy over a window of `w` sites next to `x`.
pub fn block_average(eta: &Configuration, x: usize, w: usize, side: BlockSide) -> Result<f64> {
    let (lo, hi) = block_range(eta.sites(), x, w, side)?;
    Ok(eta.occupancy()[lo - 1..hi].iter().map(|&k| k as f64).sum::<f64>() / w as f64)
}

/// Polynomial time weight `f(s) = sum_k c[k] s^k`, integrated exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeWeight(pub Vec<f64>);

impl TimeWeight {
    pub fn one() -> Self {
        TimeWeight(vec![1.0])
    }
    fn antiderivative(&self, s: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| c * s.powi(k as i32 + 1) / (k + 1) as f64)
            .sum()
    }
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if self.0.len() == 1 {
            self.0[0] * (b - a)
        } else {
            self.antiderivative(b) - self.antiderivative(a)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplacementResiduals {
    pub r4: f64,
    pub rb_left: f64,
    pub rb_right: f64,
}

/// Memoized `Phi(S / w)` for integer block sums `S`.
#[derive(Debug, Clone)]
struct PhiCache {
    w: f64,
    values: Vec<Option<f64>>,
    gc: Arc<GrandCanonical>,
}

impl PhiCache {
    fn get(&mut self, sum: u64) -> Result<f64> {
        let i = sum as usize;
        if i >= self.values.len() {
            self.values.resize(i + 1, None);
        }
        if let Some(v) = self.values[i] {
            return Ok(v);
        }
        let v = self.gc.phi_inverse(sum as f64 / self.w)?;
        self.values[i] = Some(v);
        Ok(v)
    }
}

/// Online replacement-lemma residuals. Integrands are piecewise constant in
/// time and integrated exactly.
#[derive(Debug, Clone)]
pub struct ReplacementTracker {
    sites: usize,
    w: usize,
    /// First and last `x` of the bulk index set; empty when `lo > hi`.
    lo: usize,
    hi: usize,
    weight: Vec<f64>,
    sum_eta: Vec<u64>,
    sum_g: Vec<f64>,
    term: Vec<f64>,
    bulk: f64,
    left: (u64, f64, f64),
    right: (u64, f64, f64),
    f1: TimeWeight,
    f2: TimeWeight,
    phi: PhiCache,
    g: Arc<RateFunction>,
    acc: ReplacementResiduals,
    last_t: f64,
    events: u64,
    error: Option<Error>,
}

impl ReplacementTracker {
    pub fn new(
        params: &ModelParams,
        gc: Arc<GrandCanonical>,
        g_test: &TestFunction,
        eps: f64,
        f1: TimeWeight,
        f2: TimeWeight,
        eta0: &Configuration,
        t0: f64,
    ) -> Result<Self> {
        let n = params.n();
        let sites = params.sites();
        let w = window_len(eps, n);
        if w == 0 || 1 + w > sites {
            return Err(Error::WindowOutOfRange {
                lo: 2,
                hi: 1 + w as i64,
                last: sites,
            });
        }
        let weight = (0..=sites)
            .map(|x| g_test.d2(x as f64 / n as f64) / n as f64)
            .collect();
        let mut t = ReplacementTracker {
            sites,
            w,
            lo: 1 + w,
            hi: (n - 1).saturating_sub(w),
            weight,
            sum_eta: vec![0; sites + 1],
            sum_g: vec![0.0; sites + 1],
            term: vec![0.0; sites + 1],
            bulk: 0.0,
            left: (0, 0.0, 0.0),
            right: (0, 0.0, 0.0),
            f1,
            f2,
            phi: PhiCache { w: w as f64, values: Vec::new(), gc },
            g: params.g_handle(),
            acc: ReplacementResiduals { r4: 0.0, rb_left: 0.0, rb_right: 0.0 },
            last_t: t0,
            events: 0,
            error: None,
        };
        t.refresh(eta0)?;
        Ok(t)
    }

    pub fn window(&self) -> usize {
        self.w
    }

    fn block_term(&mut self, sum_eta: u64, sum_g: f64) -> Result<f64> {
        Ok(sum_g / self.w as f64 - self.phi.get(sum_eta)?)
    }

    /// Recomputes all block sums and integrands from scratch.
    fn refresh(&mut self, eta: &Configuration) -> Result<()> {
        let occ = eta.occupancy();
        let gv: Vec<f64> = occ.iter().map(|&k| self.g.eval(k as u64)).collect();
        let window = |a: usize, b: usize| -> (u64, f64) {
            (
                occ[a - 1..b].iter().map(|&k| k as u64).sum(),
                gv[a - 1..b].iter().sum(),
            )
        };
        self.bulk = 0.0;
        for x in self.lo..=self.hi {
            let (se, sg) = window(x + 1, x + self.w);
            self.sum_eta[x] = se;
            self.sum_g[x] = sg;
            self.term[x] = self.weight[x] * self.block_term(se, sg)?;
            self.bulk += self.term[x];
        }
        let (se, sg) = window(2, 1 + self.w);
        self.left = (se, sg, self.block_term(se, sg)?);
        let (se, sg) = window(self.sites - self.w, self.sites - 1);
        self.right = (se, sg, self.block_term(se, sg)?);
        Ok(())
    }

    fn advance(&mut self, t: f64) {
        let a = self.last_t;
        self.acc.r4 += self.bulk * (t - a);
        self.acc.rb_left += self.left.2 * self.f1.integral(a, t);
        self.acc.rb_right += self.right.2 * self.f2.integral(a, t);
        self.last_t = t;
    }

    fn update_site(&mut self, y: usize, d: i64, dg: f64) -> Result<()> {
        let lo = self.lo.max(y.saturating_sub(self.w));
        let hi = self.hi.min(y.saturating_sub(1));
        for x in lo..=hi {
            self.sum_eta[x] = (self.sum_eta[x] as i64 + d) as u64;
            self.sum_g[x] += dg;
            let new = self.weight[x] * self.block_term(self.sum_eta[x], self.sum_g[x])?;
            self.bulk += new - self.term[x];
            self.term[x] = new;
        }
        if (2..=1 + self.w).contains(&y) {
            let (se, sg) = ((self.left.0 as i64 + d) as u64, self.left.1 + dg);
            self.left = (se, sg, self.block_term(se, sg)?);
        }
        if (self.sites - self.w..=self.sites - 1).contains(&y) {
            let (se, sg) = ((self.right.0 as i64 + d) as u64, self.right.1 + dg);
            self.right = (se, sg, self.block_term(se, sg)?);
        }
        Ok(())
    }

    /// Residuals integrated up to `t`.
    pub fn residuals(&self, t: f64) -> Result<ReplacementResiduals> {
        if let Some(e) = &self.error {
            return Err(e.clone());
        }
        let a = self.last_t;
        Ok(ReplacementResiduals {
            r4: self.acc.r4 + self.bulk * (t - a),
            rb_left: self.acc.rb_left + self.left.2 * self.f1.integral(a, t),
            rb_right: self.acc.rb_right + self.right.2 * self.f2.integral(a, t),
        })
    }
}

impl Observer for ReplacementTracker {
    fn on_event(&mut self, t: f64, ev: Event, eta: &Configuration) {
        if self.error.is_some() {
            return;
        }
        self.advance(t);
        self.events += 1;
        let res = if self.events % FULL_REFRESH_EVERY == 0 {
            self.refresh(eta)
        } else {
            let (changes, count) = ev.changes(eta.sites());
            changes[..count].iter().try_for_each(|&(y, d)| {
                let new = eta.get(y) as u64;
                let old = (new as i64 - d as i64) as u64;
                let dg = self.g.eval(new) - self.g.eval(old);
                self.update_site(y, d as i64, dg)
            })
        };
        if let Err(e) = res {
            self.error = Some(e);
        }
    }
}

/// Replacement residuals at the horizon of a dense trajectory, with
/// constant time weights `f1 = f2 = 1`.
pub fn replacement_residuals(
    traj: &DenseTrajectory,
    params: &ModelParams,
    gc: Arc<GrandCanonical>,
    g_test: &TestFunction,
    eps: f64,
) -> Result<ReplacementResiduals> {
    let mut tracker = ReplacementTracker::new(
        params,
        gc,
        g_test,
        eps,
        TimeWeight::one(),
        TimeWeight::one(),
        &traj.initial,
        0.0,
    )?;
    traj.replay(&mut tracker)?;
    tracker.residuals(traj.horizon)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// Fraction of `draws` sampled configurations whose pairing with `h`
/// deviates from `int h rho0` by more than `delta`.
pub fn profile_association_statistic<S, R>(
    mut sampler: S,
    rho0: R,
    h: &TestFunction,
    draws: usize,
    delta: f64,
) -> Result<f64>
where
    S: FnMut() -> Result<Configuration>,
    R: Fn(f64) -> f64,
{
    let target = integrate(&|u: f64| h.eval(u) * rho0(u), 0.0, 1.0, 1e-10);
    let mut exceed = 0usize;
    for _ in 0..draws {
        let eta = sampler()?;
        if (empirical_pairing(&eta, h) - target).abs() > delta {
            exceed += 1;
        }
    }
    Ok(exceed as f64 / draws.max(1) as f64)
}
