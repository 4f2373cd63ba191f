//! Grand-canonical machinery: partition function, density/fugacity duality,
//! product invariant measures and the exact stationarity balance.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::process::{total_rate, Configuration, ModelParams};
use crate::rates::{RateFamily, RateFunction};

pub const DEFAULT_SERIES_TOL: f64 = 1e-14;
pub const DEFAULT_MAX_TERMS: usize = 200_000;

/// Highest moment order supported by [`GrandCanonical::moment`].
pub const MAX_MOMENT: usize = 4;

/// Scaled power sums `S_l = sum_k k^l phi^k / g(k)!`, stored as
/// `exp(log_scale) * s[l]` to stay finite.
#[derive(Debug, Clone, Copy)]
struct Sums {
    log_scale: f64,
    s: [f64; MAX_MOMENT + 1],
}

/// Evaluator for `Z(phi)`, `R(phi)`, the moments `R_l(phi)` and `Phi = R^-1`.
///
/// `ln g(k)!` is tabulated once at construction, so the evaluator is
/// immutable and safe to share between threads.
#[derive(Debug, Clone)]
pub struct GrandCanonical {
    g: Arc<RateFunction>,
    series_tol: f64,
    max_terms: usize,
    log_gfact: Vec<f64>,
}

impl GrandCanonical {
    pub fn new(g: Arc<RateFunction>) -> Self {
        Self::with_tolerances(g, DEFAULT_SERIES_TOL, DEFAULT_MAX_TERMS)
    }

    pub fn with_tolerances(g: Arc<RateFunction>, series_tol: f64, max_terms: usize) -> Self {
        let table_len = max_terms.min(4096) + 1;
        let mut log_gfact = Vec::with_capacity(table_len);
        let mut acc = 0.0;
        log_gfact.push(0.0);
        for k in 1..table_len {
            acc += g.eval(k as u64).ln();
            log_gfact.push(acc);
        }
        GrandCanonical {
            g,
            series_tol,
            max_terms,
            log_gfact,
        }
    }

    pub fn rate_function(&self) -> &RateFunction {
        &self.g
    }

    pub fn rate_handle(&self) -> Arc<RateFunction> {
        Arc::clone(&self.g)
    }

    pub fn phi_star(&self) -> f64 {
        self.g.phi_star()
    }

    pub fn series_tol(&self) -> f64 {
        self.series_tol
    }

    /// `ln g(k)!`; `-inf` is never returned, a zero factor is an error.
    pub fn log_g_factorial(&self, k: u64) -> Result<f64> {
        if (k as usize) < self.log_gfact.len() && self.log_gfact[k as usize].is_finite() {
            return Ok(self.log_gfact[k as usize]);
        }
        let mut acc = 0.0;
        for j in 1..=k {
            let v = self.g.eval(j);
            if v <= 0.0 {
                return Err(Error::ZeroRateInFactorial { k, index: j });
            }
            acc += v.ln();
        }
        Ok(acc)
    }

    /// `g(1) g(2) ... g(k)`, with `g(0)! = 1`.
    pub fn g_factorial(&self, k: u64) -> Result<f64> {
        Ok(self.log_g_factorial(k)?.exp())
    }

    fn check_phi(&self, phi: f64) -> Result<()> {
        let phi_star = self.phi_star();
        if !(phi >= 0.0) || !phi.is_finite() || phi >= phi_star {
            return Err(Error::FugacityOutOfRange { phi, phi_star });
        }
        Ok(())
    }

    /// One pass over the series, accumulating `S_0..S_max_ell`.
    ///
    /// Stops once every tracked term is below `series_tol` times its partial
    /// sum and the ratio bound `phi / inf_{j>k} g(j)` certifies a geometric
    /// tail; the tail bound is then added.
    fn sums(&self, phi: f64, max_ell: usize) -> Result<Sums> {
        self.check_phi(phi)?;
        let mut s = [0.0; MAX_MOMENT + 1];
        s[0] = 1.0;
        if phi == 0.0 {
            return Ok(Sums { log_scale: 0.0, s });
        }
        let ln_phi = phi.ln();
        let mut log_scale = 0.0;
        let mut log_term = 0.0;
        for k in 1..self.max_terms as u64 {
            let gk = self.g.eval(k);
            if gk <= 0.0 {
                return Err(Error::ZeroRateInFactorial { k, index: k });
            }
            log_term += ln_phi - gk.ln();
            if log_term > log_scale {
                let f = (log_scale - log_term).exp();
                for v in s.iter_mut().take(max_ell + 1) {
                    *v *= f;
                }
                log_scale = log_term;
            }
            let w = (log_term - log_scale).exp();
            let kf = k as f64;
            let mut pw = 1.0;
            let mut terms = [0.0; MAX_MOMENT + 1];
            for ell in 0..=max_ell {
                terms[ell] = w * pw;
                s[ell] += terms[ell];
                pw *= kf;
            }

            let q = phi / self.g.tail_inf(k + 1);
            if q >= 1.0 {
                continue;
            }
            let growth = (kf + 1.0) / kf;
            let mut tails = [0.0; MAX_MOMENT + 1];
            let mut certified = true;
            let mut g_pow = 1.0;
            for ell in 0..=max_ell {
                let r = q * g_pow;
                g_pow *= growth;
                if r >= 1.0 || terms[ell] >= self.series_tol * s[ell] {
                    certified = false;
                    break;
                }
                tails[ell] = terms[ell] * r / (1.0 - r);
            }
            if certified {
                for ell in 0..=max_ell {
                    s[ell] += tails[ell];
                }
                return Ok(Sums { log_scale, s });
            }
        }
        Err(Error::SeriesNotConverged {
            phi,
            max_terms: self.max_terms,
        })
    }

    /// `Z(phi) = sum_k phi^k / g(k)!`.
    pub fn partition_z(&self, phi: f64) -> Result<f64> {
        let sums = self.sums(phi, 0)?;
        Ok(sums.log_scale.exp() * sums.s[0])
    }

    pub fn log_partition_z(&self, phi: f64) -> Result<f64> {
        let sums = self.sums(phi, 0)?;
        Ok(sums.log_scale + sums.s[0].ln())
    }

    /// Mean occupancy `R(phi)` of the marginal at fugacity `phi`.
    pub fn density(&self, phi: f64) -> Result<f64> {
        let sums = self.sums(phi, 1)?;
        Ok(sums.s[1] / sums.s[0])
    }

    /// `R_l(phi) = E[eta^l]` for `1 <= l <= 4`.
    pub fn moment(&self, phi: f64, ell: usize) -> Result<f64> {
        if ell == 0 || ell > MAX_MOMENT {
            return Err(Error::InvalidParams(format!(
                "moment order {ell} outside 1..={MAX_MOMENT}"
            )));
        }
        let sums = self.sums(phi, ell)?;
        Ok(sums.s[ell] / sums.s[0])
    }

    /// Marginal probability `phi^k / (Z(phi) g(k)!)`.
    pub fn pmf(&self, phi: f64, k: u64) -> Result<f64> {
        let log_z = self.log_partition_z(phi)?;
        if k == 0 {
            return Ok((-log_z).exp());
        }
        if phi == 0.0 {
            return Ok(0.0);
        }
        let lg = self.log_g_factorial(k)?;
        Ok((k as f64 * phi.ln() - lg - log_z).exp())
    }

    /// `Phi(rho)`: the fugacity with `R(phi) = rho`.
    ///
    /// The linear and constant families use their closed forms; everything
    /// else goes through [`Self::phi_inverse_bisect`].
    pub fn phi_inverse(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParams(format!("density {rho} must be finite and >= 0")));
        }
        match self.g.family() {
            RateFamily::Linear => Ok(rho),
            RateFamily::Constant => Ok(rho / (1.0 + rho)),
            _ => self.phi_inverse_bisect(rho),
        }
    }

    /// Bisection on `[0, phi* - margin]` (or a doubling bracket when
    /// `phi* = inf`), run until the bracket cannot be split further.
    pub fn phi_inverse_bisect(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParams(format!("density {rho} must be finite and >= 0")));
        }
        if rho == 0.0 {
            return Ok(0.0);
        }
        let phi_star = self.phi_star();
        let mut hi = if phi_star.is_finite() {
            // Approach the radius geometrically so the series stays cheap.
            let mut gap = 0.5;
            loop {
                let hi = phi_star * (1.0 - gap);
                match self.density(hi) {
                    Ok(r) if r >= rho => break hi,
                    Ok(_) if gap > 1e-9 => gap *= 0.5,
                    Ok(_) | Err(Error::SeriesNotConverged { .. }) => {
                        return Err(Error::DensityUnreachable { rho, phi_max: hi })
                    }
                    Err(e) => return Err(e),
                }
            }
        } else {
            let mut hi = rho.max(1.0);
            while self.density(hi)? < rho {
                hi *= 2.0;
                if hi > 1e12 {
                    return Err(Error::DensityUnreachable { rho, phi_max: hi });
                }
            }
            hi
        };
        let mut lo = 0.0;
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.density(mid)? < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (rl, rh) = (self.density(lo)?, self.density(hi)?);
        Ok(if (rho - rl).abs() <= (rh - rho).abs() { lo } else { hi })
    }
}

/// Site-wise fugacities of the product invariant measure.
#[derive(Debug, Clone, PartialEq)]
pub struct FugacityProfile {
    pub n: usize,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub delta: f64,
    /// `values[x - 1]` is the fugacity at site `x`.
    pub values: Vec<f64>,
}

impl FugacityProfile {
    #[inline]
    pub fn at(&self, x: usize) -> f64 {
        self.values[x - 1]
    }
}

/// Fugacity at site `x` of the specialized model
/// (`delta = 1, lambda = beta = 0`).
pub fn specialized_fugacity(n: usize, theta: f64, alpha: f64, x: usize) -> f64 {
    let nf = n as f64;
    -alpha / nf.powf(theta) * (x as f64 + 1.0) + alpha / nf.powf(theta - 1.0) + alpha
}

/// Linear fugacity profile of the stationary product measure for the
/// general reservoir model.
pub fn fugacity_profile(params: &ModelParams) -> Result<FugacityProfile> {
    let n = params.n();
    let nf = n as f64;
    let nt = nf.powf(params.theta());
    let (a, b, l, d) = (params.alpha(), params.beta(), params.lambda(), params.delta());
    let denom = l * d * (nf - 2.0) + (l + d) * nt;
    if denom <= 0.0 {
        return Err(Error::InvalidParams(
            "no removal at either boundary: the process has no invariant law".into(),
        ));
    }
    let phi_star = params.g().phi_star();
    let mut values = Vec::with_capacity(n - 1);
    for x in 1..n {
        let v = (-(a * d - b * l) * (x as f64 - 1.0) + a * d * (nf - 2.0) + (a + b) * nt) / denom;
        if v >= phi_star {
            return Err(Error::FugacityExceedsRadius {
                site: x,
                value: v,
                phi_star,
            });
        }
        values.push(v);
    }
    Ok(FugacityProfile {
        n,
        theta: params.theta(),
        alpha: a,
        beta: b,
        lambda: l,
        delta: d,
        values,
    })
}

/// Limit `N -> inf` of the fugacity profile at macroscopic position `u`.
pub fn asymptotic_fugacity(u: f64, params: &ModelParams) -> f64 {
    let (a, b, l, d) = (params.alpha(), params.beta(), params.lambda(), params.delta());
    if params.theta() == 1.0 {
        (-(a * d - b * l) * u + a * d + a + b) / (l * d + l + d)
    } else {
        (a + b) / (l + d)
    }
}

/// Stationary density profile: `R(alpha (2 - u))` for `theta = 1` and
/// `R(alpha)` for `theta > 1` in the specialized model.
pub fn hydrostatic_profile(u: f64, params: &ModelParams, gc: &GrandCanonical) -> Result<f64> {
    gc.density(asymptotic_fugacity(u, params))
}

/// Left-hand side minus right-hand side of the global balance equation
/// `sum_{eta'} nu(eta')/nu(eta) r(eta', eta) = lambda(eta)` for the product
/// measure with the given site fugacities, using unscaled rates.
///
/// Vanishes up to roundoff exactly when `fugacities` is the stationary
/// profile.
pub fn stationary_balance_residual(
    eta: &Configuration,
    params: &ModelParams,
    fugacities: &[f64],
) -> Result<f64> {
    let sites = params.sites();
    if fugacities.len() != sites || eta.sites() != sites {
        return Err(Error::InvalidParams("profile and configuration sizes differ".into()));
    }
    if fugacities.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::InvalidParams("balance needs strictly positive fugacities".into()));
    }
    let g = params.g();
    let b = params.boundary_scale();
    let phi = |x: usize| fugacities[x - 1];
    let mut lhs = 0.0;
    for (x, k) in eta.iter() {
        let gx = g.eval(k as u64);
        if gx == 0.0 {
            continue;
        }
        let mut inflow = 0.0;
        if x > 1 {
            inflow += phi(x - 1);
        } else {
            inflow += params.alpha() * b;
        }
        if x < sites {
            inflow += phi(x + 1);
        } else {
            inflow += params.beta() * b;
        }
        lhs += inflow / phi(x) * gx;
    }
    lhs += (params.lambda() * phi(1) + params.delta() * phi(sites)) * b;
    let exit = total_rate(eta, &params.clone().with_diffusive(false));
    Ok(lhs - exit)
}

/// Per-site fugacities or a macroscopic density profile to sample from.
pub enum ProfileSource<'a> {
    Fugacities(Vec<f64>),
    /// `rho0(x / N)` at each site `x`, converted through `Phi`.
    Density {
        n: usize,
        rho0: &'a dyn Fn(f64) -> f64,
    },
}

/// Cumulative table for one fugacity.
#[derive(Debug)]
struct Cdf {
    cumulative: Vec<f64>,
}

impl Cdf {
    fn build(gc: &GrandCanonical, phi: f64) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        let p0 = gc.pmf(phi, 0)?;
        acc += p0;
        cumulative.push(acc);
        if phi == 0.0 {
            return Ok(Cdf { cumulative });
        }
        let ln_phi = phi.ln();
        let log_z = gc.log_partition_z(phi)?;
        let mut log_p = -log_z;
        let g = gc.rate_function();
        let mut k = 0u64;
        loop {
            k += 1;
            log_p += ln_phi - g.eval(k).ln();
            acc += log_p.exp();
            cumulative.push(acc);
            let past_mode = phi < g.tail_inf(k + 1);
            if (past_mode && 1.0 - acc < 1e-15) || k as usize >= gc.max_terms {
                break;
            }
        }
        Ok(Cdf { cumulative })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.gen();
        let idx = self.cumulative.partition_point(|&c| c < u);
        idx.min(self.cumulative.len() - 1) as u32
    }
}

/// Inverse-CDF sampler for a product measure; one cumulative table per
/// distinct fugacity.
#[derive(Debug, Clone)]
pub struct ProductSampler {
    tables: Vec<Arc<Cdf>>,
    fugacities: Vec<f64>,
}

impl ProductSampler {
    pub fn new(gc: &GrandCanonical, source: ProfileSource<'_>) -> Result<Self> {
        let fugacities = match source {
            ProfileSource::Fugacities(v) => v,
            ProfileSource::Density { n, rho0 } => (1..n)
                .map(|x| gc.phi_inverse(rho0(x as f64 / n as f64)))
                .collect::<Result<Vec<_>>>()?,
        };
        let mut cache: HashMap<u64, Arc<Cdf>> = HashMap::new();
        let mut tables = Vec::with_capacity(fugacities.len());
        for &phi in &fugacities {
            let entry = match cache.get(&phi.to_bits()) {
                Some(t) => Arc::clone(t),
                None => {
                    let t = Arc::new(Cdf::build(gc, phi)?);
                    cache.insert(phi.to_bits(), Arc::clone(&t));
                    t
                }
            };
            tables.push(entry);
        }
        Ok(ProductSampler { tables, fugacities })
    }

    pub fn fugacities(&self) -> &[f64] {
        &self.fugacities
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        Configuration::from_occupancy(self.tables.iter().map(|t| t.draw(rng)).collect())
    }
}

/// One draw from the product measure described by `source`.
pub fn sample_product_measure<R: Rng + ?Sized>(
    gc: &GrandCanonical,
    source: ProfileSource<'_>,
    rng: &mut R,
) -> Result<Configuration> {
    Ok(ProductSampler::new(gc, source)?.sample(rng))
}
