//! Basic coupling of two copies of the process started from ordered
//! configurations.
//!
//! Both copies share the clock and every random draw. At each site the
//! pair jumps together at rate `min(g(eta(x)), g(xi(x)))` per direction and
//! the upper copy alone at rate `g(xi(x)) - g(eta(x))`; reservoir moves are
//! coupled the same way.

use crate::error::{Error, Result};
use crate::process::{apply_event_mut, Configuration, Direction, Event, ModelParams};
use crate::rate_index::RateIndex;
use crate::rng::StreamRng;

/// What one coupled transition did to each copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoupledEvent {
    pub lower: Option<Event>,
    pub upper: Option<Event>,
}

const PER_SITE: usize = 4;
const JOINT_CREATE_LEFT: usize = 0;
const JOINT_CREATE_RIGHT: usize = 1;
const JOINT_ANNIHILATE_LEFT: usize = 2;
const UPPER_ANNIHILATE_LEFT: usize = 3;
const JOINT_ANNIHILATE_RIGHT: usize = 4;
const UPPER_ANNIHILATE_RIGHT: usize = 5;

#[derive(Debug, Clone)]
pub struct CoupledState {
    lower: Configuration,
    upper: Configuration,
    t: f64,
    index: RateIndex,
    sites: usize,
    speed: f64,
    boundary: f64,
    rng: StreamRng,
    events: u64,
}

impl CoupledState {
    pub fn new(params: &ModelParams, lower: Configuration, upper: Configuration, rng: StreamRng) -> Result<Self> {
        if !params.g().non_decreasing() {
            return Err(Error::CouplingRequiresMonotoneRates);
        }
        let sites = params.sites();
        if lower.sites() != sites || upper.sites() != sites {
            return Err(Error::InvalidParams("configurations do not match the lattice".into()));
        }
        if let Some(x) = (1..=sites).find(|&x| lower.get(x) > upper.get(x)) {
            return Err(Error::OrderingViolated { site: x });
        }
        let boundary = params.speed() * params.boundary_scale();
        let mut leaves = vec![0.0; PER_SITE * sites + 6];
        leaves[PER_SITE * sites + JOINT_CREATE_LEFT] = boundary * params.alpha();
        leaves[PER_SITE * sites + JOINT_CREATE_RIGHT] = boundary * params.beta();
        let mut s = CoupledState {
            lower,
            upper,
            t: 0.0,
            index: RateIndex::new(leaves),
            sites,
            speed: params.speed(),
            boundary,
            rng,
            events: 0,
        };
        for x in 1..=sites {
            s.refresh(params, x);
        }
        Ok(s)
    }

    pub fn lower(&self) -> &Configuration {
        &self.lower
    }
    pub fn upper(&self) -> &Configuration {
        &self.upper
    }
    pub fn time(&self) -> f64 {
        self.t
    }
    /// Number of coupled transitions so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    fn refresh(&mut self, params: &ModelParams, x: usize) {
        let g = params.g();
        let gl = g.eval(self.lower.get(x) as u64);
        let gu = g.eval(self.upper.get(x) as u64);
        let joint = gl.min(gu);
        let extra = (gu - gl).max(0.0);
        let base = PER_SITE * (x - 1);
        let (left_ok, right_ok) = (x > 1, x < self.sites);
        let on = |ok: bool, v: f64| if ok { v } else { 0.0 };
        self.index.set(base, on(left_ok, self.speed * joint));
        self.index.set(base + 1, on(right_ok, self.speed * joint));
        self.index.set(base + 2, on(left_ok, self.speed * extra));
        self.index.set(base + 3, on(right_ok, self.speed * extra));
        let b = PER_SITE * self.sites;
        if x == 1 {
            self.index.set(b + JOINT_ANNIHILATE_LEFT, self.boundary * params.lambda() * joint);
            self.index.set(b + UPPER_ANNIHILATE_LEFT, self.boundary * params.lambda() * extra);
        }
        if x == self.sites {
            self.index.set(b + JOINT_ANNIHILATE_RIGHT, self.boundary * params.delta() * joint);
            self.index.set(b + UPPER_ANNIHILATE_RIGHT, self.boundary * params.delta() * extra);
        }
    }

    fn decode(&self, slot: usize) -> CoupledEvent {
        let both = |e| CoupledEvent { lower: Some(e), upper: Some(e) };
        let upper_only = |e| CoupledEvent { lower: None, upper: Some(e) };
        if slot < PER_SITE * self.sites {
            let x = slot / PER_SITE + 1;
            let dir = if slot % 2 == 0 { Direction::Left } else { Direction::Right };
            let ev = Event::BulkJump { x, dir };
            return if slot % PER_SITE < 2 { both(ev) } else { upper_only(ev) };
        }
        match slot - PER_SITE * self.sites {
            JOINT_CREATE_LEFT => both(Event::CreateLeft),
            JOINT_CREATE_RIGHT => both(Event::CreateRight),
            JOINT_ANNIHILATE_LEFT => both(Event::AnnihilateLeft),
            UPPER_ANNIHILATE_LEFT => upper_only(Event::AnnihilateLeft),
            JOINT_ANNIHILATE_RIGHT => both(Event::AnnihilateRight),
            _ => upper_only(Event::AnnihilateRight),
        }
    }

    /// One coupled transition; verifies the order at every touched site.
    pub fn step(&mut self, params: &ModelParams) -> Result<CoupledEvent> {
        let total = self.index.total();
        if !(total > 0.0) {
            return Err(Error::Absorbed { t: self.t });
        }
        self.t += self.rng.exponential(total);
        let slot = self.index.select(self.rng.open01() * total);
        let ce = self.decode(slot);
        if let Some(e) = ce.lower {
            apply_event_mut(&mut self.lower, e)?;
        }
        if let Some(e) = ce.upper {
            apply_event_mut(&mut self.upper, e)?;
        }
        self.events += 1;
        let ev = ce.upper.or(ce.lower).expect("every coupled transition moves the upper copy");
        let (changes, count) = ev.changes(self.sites);
        for &(x, _) in &changes[..count] {
            if self.lower.get(x) > self.upper.get(x) {
                return Err(Error::OrderingViolated { site: x });
            }
            self.refresh(params, x);
        }
        Ok(ce)
    }

    /// Full componentwise order check.
    pub fn is_ordered(&self) -> bool {
        self.lower.le(&self.upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::event_rate;
    use crate::rates::{RateFamily, RateFunction, TailRule};
    use crate::rng::Purpose;
    use crate::sim::SimState;
    use std::sync::Arc;

    fn params(g: RateFunction) -> ModelParams {
        ModelParams::general(8, 1.0, 1.0, 0.5, 0.4, 1.0, Arc::new(g)).unwrap()
    }

    #[test]
    fn refuses_non_monotone_rates() {
        let g = RateFunction::new(
            RateFamily::Table { values: vec![0.0, 2.0, 1.0], tail: TailRule::Hold },
            64,
            Some(1.0),
        )
        .unwrap();
        let p = ModelParams::new(5, 1.0, 0.5, Arc::new(g)).unwrap();
        let c = Configuration::empty(4);
        assert!(matches!(
            CoupledState::new(&p, c.clone(), c, StreamRng::new(1, 0, Purpose::Coupling)),
            Err(Error::CouplingRequiresMonotoneRates)
        ));
    }

    #[test]
    fn refuses_unordered_start() {
        let p = params(RateFunction::linear());
        let lo = Configuration::from_occupancy(vec![0, 2, 0, 0, 0, 0, 0]);
        let hi = Configuration::from_occupancy(vec![5, 1, 0, 0, 0, 0, 0]);
        assert!(matches!(
            CoupledState::new(&p, lo, hi, StreamRng::new(1, 0, Purpose::Coupling)),
            Err(Error::OrderingViolated { site: 2 })
        ));
    }

    #[test]
    fn equal_copies_stay_equal() {
        let p = params(RateFunction::linear());
        let c = Configuration::from_occupancy(vec![2, 0, 1, 3, 0, 1, 1]);
        let mut cs = CoupledState::new(&p, c.clone(), c, StreamRng::new(2, 0, Purpose::Coupling)).unwrap();
        for _ in 0..20_000 {
            let ev = cs.step(&p).unwrap();
            assert_eq!(ev.lower, ev.upper);
            assert_eq!(cs.lower(), cs.upper());
        }
    }

    #[test]
    fn ordering_holds_along_runs() {
        for g in [RateFunction::linear(), RateFunction::constant(), RateFunction::capped(2).unwrap()] {
            let p = params(g);
            let lo = Configuration::empty(7);
            let hi = Configuration::from_occupancy(vec![3, 1, 4, 1, 5, 9, 2]);
            let mut cs = CoupledState::new(&p, lo, hi, StreamRng::new(3, 0, Purpose::Coupling)).unwrap();
            for _ in 0..100_000 {
                cs.step(&p).unwrap();
                assert!(cs.is_ordered());
            }
        }
    }

    #[test]
    fn marginal_rates_match_the_process() {
        // Summing coupled slot rates by the event each copy sees must give
        // the standalone rates of that copy.
        let p = params(RateFunction::capped(3).unwrap());
        let lo = Configuration::from_occupancy(vec![0, 1, 2, 0, 1, 4, 1]);
        let hi = Configuration::from_occupancy(vec![2, 1, 5, 0, 3, 4, 2]);
        let cs = CoupledState::new(&p, lo.clone(), hi.clone(), StreamRng::new(4, 0, Purpose::Coupling)).unwrap();
        for ev in Event::all(7) {
            let (mut rl, mut ru) = (0.0, 0.0);
            for slot in 0..cs.index.len() {
                let ce = cs.decode(slot);
                if ce.lower == Some(ev) {
                    rl += cs.index.get(slot);
                }
                if ce.upper == Some(ev) {
                    ru += cs.index.get(slot);
                }
            }
            assert!((rl - event_rate(&lo, ev, &p)).abs() < 1e-9, "{ev}");
            assert!((ru - event_rate(&hi, ev, &p)).abs() < 1e-9, "{ev}");
        }
    }

    #[test]
    fn upper_marginal_statistics_match_standalone() {
        // Compare mean particle counts after a fixed time between the upper
        // copy of coupled runs and standalone runs.
        let p = ModelParams::new(6, 1.0, 1.0, Arc::new(RateFunction::linear())).unwrap();
        let hi = Configuration::from_occupancy(vec![2, 2, 2, 2, 2]);
        let horizon = 0.05;
        let reps = 4000;
        let mut coupled = Vec::with_capacity(reps);
        let mut alone = Vec::with_capacity(reps);
        for r in 0..reps as u64 {
            let mut cs = CoupledState::new(&p, Configuration::empty(5), hi.clone(), StreamRng::new(5, r, Purpose::Coupling))
                .unwrap();
            let mut snap = cs.upper().total();
            loop {
                cs.step(&p).unwrap();
                if cs.time() > horizon {
                    break;
                }
                snap = cs.upper().total();
            }
            coupled.push(snap as f64);
            let mut s = SimState::new(&p, hi.clone(), StreamRng::new(6, r, Purpose::Dynamics)).unwrap();
            s.run_until(&p, horizon, &mut ()).unwrap();
            alone.push(s.eta().total() as f64);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = ((var(&coupled) + var(&alone)) / reps as f64).sqrt();
        assert!((mean(&coupled) - mean(&alone)).abs() <= 4.0 * se, "{} vs {}", mean(&coupled), mean(&alone));
    }
}
