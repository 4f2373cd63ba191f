//! Conservative finite-volume solver for `d_t rho = Laplacian Phi(rho)` on
//! `[0, 1]` with reservoir (Robin) or zero-flux (Neumann) ends.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::GrandCanonical;
use crate::observables::SpaceTimeFunction;
use crate::process::ModelParams;

/// Cell averages on a uniform grid of `[0, 1]` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub rho: Vec<f64>,
    pub t: f64,
}

impl DensityField {
    pub fn new(rho: Vec<f64>, t: f64) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::InvalidParams("density field needs at least one cell".into()));
        }
        if let Some(v) = rho.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParams(format!("density value {v} must be finite and >= 0")));
        }
        Ok(DensityField { rho, t })
    }

    /// Samples `profile` at the `m` cell midpoints.
    pub fn from_profile(m: usize, profile: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / m as f64;
        DensityField::new((0..m).map(|i| profile((i as f64 + 0.5) * h)).collect(), 0.0)
    }

    pub fn cells(&self) -> usize {
        self.rho.len()
    }
    pub fn h(&self) -> f64 {
        1.0 / self.rho.len() as f64
    }
    pub fn midpoint(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }
    pub fn mass(&self) -> f64 {
        self.h() * self.rho.iter().sum::<f64>()
    }
    /// Value at `u`, constant on each cell.
    pub fn at(&self, u: f64) -> f64 {
        let i = ((u * self.cells() as f64).floor() as isize).clamp(0, self.cells() as isize - 1);
        self.rho[i as usize]
    }
}

/// Boundary data of the macroscopic equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    kappa: u8,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub delta: f64,
}

impl BoundarySpec {
    pub fn new(kappa: u8, alpha: f64, beta: f64, lambda: f64, delta: f64) -> Result<Self> {
        if kappa > 1 {
            return Err(Error::InvalidParams(format!("kappa must be 0 or 1, got {kappa}")));
        }
        for (name, v) in [("alpha", alpha), ("beta", beta), ("lambda", lambda), ("delta", delta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(BoundarySpec { kappa, alpha, beta, lambda, delta })
    }

    /// Left influx `alpha`, right outflux `Phi(rho(1))`.
    pub fn specialized(kappa: u8, alpha: f64) -> Result<Self> {
        BoundarySpec::new(kappa, alpha, 0.0, 0.0, 1.0)
    }

    /// Boundary data matching a microscopic model, with `kappa` fixed by
    /// `theta`.
    pub fn from_params(p: &ModelParams) -> Self {
        BoundarySpec {
            kappa: p.kappa(),
            alpha: p.alpha(),
            beta: p.beta(),
            lambda: p.lambda(),
            delta: p.delta(),
        }
    }

    pub fn kappa(&self) -> u8 {
        self.kappa
    }

    fn fluxes_from_phi(&self, phi_first: f64, phi_last: f64) -> (f64, f64) {
        let k = self.kappa as f64;
        (
            k * (self.alpha - self.lambda * phi_first),
            -k * (self.beta - self.delta * phi_last),
        )
    }
}

pub fn phi_field(field: &DensityField, gc: &GrandCanonical) -> Result<Vec<f64>> {
    field.rho.iter().map(|&r| gc.phi_inverse(r)).collect()
}

/// Fluxes `J = -d_u Phi(rho)` through `u = 0` and `u = 1`, using the
/// boundary cells' values.
pub fn boundary_fluxes(field: &DensityField, bc: &BoundarySpec, gc: &GrandCanonical) -> Result<(f64, f64)> {
    let first = gc.phi_inverse(field.rho[0])?;
    let last = gc.phi_inverse(field.rho[field.cells() - 1])?;
    Ok(bc.fluxes_from_phi(first, last))
}

fn rhs_from_phi(phi: &[f64], bc: &BoundarySpec, out: &mut Vec<f64>) {
    let m = phi.len();
    let h = 1.0 / m as f64;
    let (f_left, f_right) = bc.fluxes_from_phi(phi[0], phi[m - 1]);
    out.clear();
    let mut f_prev = f_left;
    for i in 0..m {
        let f_next = if i + 1 < m { -(phi[i + 1] - phi[i]) / h } else { f_right };
        out.push((f_prev - f_next) / h);
        f_prev = f_next;
    }
}

/// Time derivative of every cell average.
pub fn rhs(field: &DensityField, bc: &BoundarySpec, gc: &GrandCanonical) -> Result<Vec<f64>> {
    let phi = phi_field(field, gc)?;
    let mut out = Vec::with_capacity(phi.len());
    rhs_from_phi(&phi, bc, &mut out);
    Ok(out)
}

/// Centered-difference slope of `Phi` at `rho`, floored at `1e-12`.
fn phi_slope(gc: &GrandCanonical, rho: f64) -> Result<f64> {
    let e = 1e-6 * rho.max(1.0);
    let lo = (rho - e).max(0.0);
    let hi = rho + e;
    let d = (gc.phi_inverse(hi)? - gc.phi_inverse(lo)?) / (hi - lo);
    Ok(d.max(1e-12))
}

/// Largest step allowed by `dt <= cfl h^2 / (2 sup Phi')`.
pub fn stable_dt(field: &DensityField, gc: &GrandCanonical, cfl: f64) -> Result<f64> {
    let mut sup: f64 = 1e-12;
    for &r in &field.rho {
        sup = sup.max(phi_slope(gc, r)?);
    }
    let h = field.h();
    Ok(cfl * h * h / (2.0 * sup))
}

fn euler(field: &DensityField, phi: &[f64], bc: &BoundarySpec, dt: f64, scratch: &mut Vec<f64>) -> Option<Vec<f64>> {
    rhs_from_phi(phi, bc, scratch);
    let mut next = Vec::with_capacity(field.rho.len());
    for (r, d) in field.rho.iter().zip(scratch.iter()) {
        let v = r + dt * d;
        if !v.is_finite() || v < 0.0 {
            return None;
        }
        next.push(v);
    }
    Some(next)
}

/// One forward-Euler step of length `dt`.
pub fn step_explicit(field: &DensityField, bc: &BoundarySpec, gc: &GrandCanonical, dt: f64) -> Result<DensityField> {
    let phi = phi_field(field, gc)?;
    let mut scratch = Vec::new();
    match euler(field, &phi, bc, dt, &mut scratch) {
        Some(rho) => Ok(DensityField { rho, t: field.t + dt }),
        None => Err(Error::StabilityFailure { t: field.t, retries: 0 }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveControls {
    pub cfl: f64,
    pub max_retries: u32,
    /// Times at which frames are kept, in addition to the start and the
    /// horizon.
    pub output_times: Vec<f64>,
}

impl Default for SolveControls {
    fn default() -> Self {
        SolveControls { cfl: 0.9, max_retries: 20, output_times: Vec::new() }
    }
}

/// Frames at the requested times and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub frames: Vec<DensityField>,
    pub steps: u64,
}

impl Solution {
    pub fn last(&self) -> &DensityField {
        self.frames.last().expect("solution keeps the initial frame")
    }
}

/// Integrates to `horizon` with CFL-adapted steps that land exactly on
/// every output time.
pub fn solve(
    field0: &DensityField,
    bc: &BoundarySpec,
    gc: &GrandCanonical,
    horizon: f64,
    controls: &SolveControls,
) -> Result<Solution> {
    let t0 = field0.t;
    if !(horizon >= t0) {
        return Err(Error::InvalidParams(format!("horizon {horizon} precedes start {t0}")));
    }
    let mut stops: Vec<f64> = controls
        .output_times
        .iter()
        .copied()
        .filter(|&t| t > t0 && t < horizon)
        .collect();
    stops.push(horizon);
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut frames = vec![field0.clone()];
    let mut cur = field0.clone();
    let mut steps = 0u64;
    let mut scratch = Vec::new();
    for &stop in &stops {
        while cur.t < stop {
            let phi = phi_field(&cur, gc)?;
            let mut sup: f64 = 1e-12;
            for &r in &cur.rho {
                sup = sup.max(phi_slope(gc, r)?);
            }
            let h = cur.h();
            let mut dt = controls.cfl * h * h / (2.0 * sup);
            let last_step = cur.t + dt >= stop;
            if last_step {
                dt = stop - cur.t;
            }
            let mut retries = 0;
            let rho = loop {
                if let Some(rho) = euler(&cur, &phi, bc, dt, &mut scratch) {
                    break rho;
                }
                if retries >= controls.max_retries {
                    return Err(Error::StabilityFailure { t: cur.t, retries });
                }
                retries += 1;
                dt *= 0.5;
            };
            let t = if last_step && retries == 0 { stop } else { cur.t + dt };
            cur = DensityField { rho, t };
            steps += 1;
        }
        frames.push(cur.clone());
    }
    Ok(Solution { frames, steps })
}

/// Signed defect of the weak formulation at frame `upto`, with trapezoidal
/// quadrature over the recorded frames and midpoint quadrature in space.
/// Boundary values of `Phi(rho)` are taken from the boundary cells.
pub fn weak_form_residual(
    frames: &[DensityField],
    bc: &BoundarySpec,
    gc: &GrandCanonical,
    g: &SpaceTimeFunction,
    upto: usize,
) -> Result<f64> {
    if upto >= frames.len() {
        return Err(Error::InvalidParams(format!(
            "frame {upto} requested from {} frames",
            frames.len()
        )));
    }
    let pair = |f: &DensityField, vals: &[f64], w: &dyn Fn(f64) -> f64| -> f64 {
        f.h() * vals.iter().enumerate().map(|(i, v)| v * w(f.midpoint(i))).sum::<f64>()
    };
    let kappa = bc.kappa() as f64;
    let integrand = |f: &DensityField| -> Result<f64> {
        let s = f.t;
        let phi = phi_field(f, gc)?;
        let (p0, p1) = (phi[0], phi[phi.len() - 1]);
        let mut v = pair(f, &f.rho, &|u| g.d_s(s, u)) + pair(f, &phi, &|u| g.d_uu(s, u));
        v += p0 * g.d_u(s, 0.0) - p1 * g.d_u(s, 1.0);
        v += kappa
            * ((bc.alpha - bc.lambda * p0) * g.eval(s, 0.0) + (bc.beta - bc.delta * p1) * g.eval(s, 1.0));
        Ok(v)
    };
    let first = &frames[0];
    let now = &frames[upto];
    let mut acc = pair(now, &now.rho, &|u| g.eval(now.t, u)) - pair(first, &first.rho, &|u| g.eval(first.t, u));
    let mut prev = integrand(first)?;
    for k in 1..=upto {
        let cur = integrand(&frames[k])?;
        acc -= 0.5 * (prev + cur) * (frames[k].t - frames[k - 1].t);
        prev = cur;
    }
    Ok(acc)
}

/// CSV with columns `t,u,rho`.
pub fn write_solution_csv<W: Write>(out: W, frames: &[DensityField]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "u", "rho"]).map_err(|e| Error::Io(e.to_string()))?;
    for f in frames {
        for (i, r) in f.rho.iter().enumerate() {
            w.write_record(&[f.t.to_string(), f.midpoint(i).to_string(), r.to_string()])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
