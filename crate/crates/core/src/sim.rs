//! Exact event-driven simulation of the process with generator `N^2 L_N`.
//!
//! Time is macroscopic: all rates already carry the `N^2` speed-up when the
//! model is diffusive.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::process::{apply_event_mut, Configuration, Direction, Event, ModelParams};
use crate::rate_index::RateIndex;
use crate::rng::{Purpose, StreamRng};

/// Receives every applied event together with the configuration after it.
pub trait Observer {
    fn on_event(&mut self, t: f64, ev: Event, eta: &Configuration);
}

impl Observer for () {
    #[inline]
    fn on_event(&mut self, _t: f64, _ev: Event, _eta: &Configuration) {}
}

impl<F: FnMut(f64, Event, &Configuration)> Observer for F {
    #[inline]
    fn on_event(&mut self, t: f64, ev: Event, eta: &Configuration) {
        self(t, ev, eta)
    }
}

const CREATE_LEFT: usize = 0;
const CREATE_RIGHT: usize = 1;
const ANNIHILATE_LEFT: usize = 2;
const ANNIHILATE_RIGHT: usize = 3;

/// Rates of the model laid out on `(N-1) + 4` slots: the total jump rate
/// out of each site, then the four reservoir moves. The direction of a bulk
/// jump is read off the position of the selection target inside its leaf.
#[derive(Debug, Clone)]
struct SlotRates {
    sites: usize,
    speed: f64,
    boundary: f64,
}

impl SlotRates {
    fn new(params: &ModelParams) -> Self {
        SlotRates {
            sites: params.sites(),
            speed: params.speed(),
            boundary: params.speed() * params.boundary_scale(),
        }
    }

    #[inline]
    fn boundary_slot(&self, which: usize) -> usize {
        self.sites + which
    }

    /// Event for `slot`, given the offset `rem` of the target inside it.
    #[inline]
    fn event_of(&self, slot: usize, rem: f64, leaf: f64) -> Event {
        if slot < self.sites {
            let x = slot + 1;
            let dir = if x == 1 {
                Direction::Right
            } else if x == self.sites || rem < 0.5 * leaf {
                Direction::Left
            } else {
                Direction::Right
            };
            Event::BulkJump { x, dir }
        } else {
            match slot - self.sites {
                CREATE_LEFT => Event::CreateLeft,
                CREATE_RIGHT => Event::CreateRight,
                ANNIHILATE_LEFT => Event::AnnihilateLeft,
                _ => Event::AnnihilateRight,
            }
        }
    }

    fn initial(&self, eta: &Configuration, params: &ModelParams) -> Vec<f64> {
        let mut v = vec![0.0; self.sites + 4];
        v[self.boundary_slot(CREATE_LEFT)] = self.boundary * params.alpha();
        v[self.boundary_slot(CREATE_RIGHT)] = self.boundary * params.beta();
        let mut idx = RateIndex::new(v);
        for x in 1..=self.sites {
            self.refresh(&mut idx, eta, params, x);
        }
        (0..idx.len()).map(|i| idx.get(i)).collect()
    }

    /// Updates every slot whose rate depends on `eta(x)`.
    #[inline]
    fn refresh(&self, idx: &mut RateIndex, eta: &Configuration, params: &ModelParams, x: usize) {
        let gx = params.g().eval(eta.get(x) as u64);
        let directions = if x == 1 || x == self.sites { 1.0 } else { 2.0 };
        idx.set(x - 1, directions * self.speed * gx);
        if x == 1 {
            idx.set(self.boundary_slot(ANNIHILATE_LEFT), self.boundary * params.lambda() * gx);
        }
        if x == self.sites {
            idx.set(self.boundary_slot(ANNIHILATE_RIGHT), self.boundary * params.delta() * gx);
        }
    }
}

/// State of one trajectory.
#[derive(Debug, Clone)]
pub struct SimState {
    eta: Configuration,
    t: f64,
    index: RateIndex,
    slots: SlotRates,
    creations: u64,
    annihilations: u64,
    events: u64,
    rng: StreamRng,
}

impl SimState {
    pub fn new(params: &ModelParams, eta: Configuration, rng: StreamRng) -> Result<Self> {
        if eta.sites() != params.sites() {
            return Err(Error::InvalidParams(format!(
                "configuration has {} sites, model has {}",
                eta.sites(),
                params.sites()
            )));
        }
        let slots = SlotRates::new(params);
        let index = RateIndex::new(slots.initial(&eta, params));
        Ok(SimState {
            eta,
            t: 0.0,
            index,
            slots,
            creations: 0,
            annihilations: 0,
            events: 0,
            rng,
        })
    }

    pub fn eta(&self) -> &Configuration {
        &self.eta
    }
    pub fn time(&self) -> f64 {
        self.t
    }
    /// Number of creation events `Y_t` since time 0.
    pub fn creations(&self) -> u64 {
        self.creations
    }
    pub fn annihilations(&self) -> u64 {
        self.annihilations
    }
    pub fn events(&self) -> u64 {
        self.events
    }
    pub fn total_rate(&self) -> f64 {
        self.index.total()
    }
    pub fn rate_index(&self) -> &RateIndex {
        &self.index
    }
    /// Rebuilds the rate index from its leaves; returns the relative drift.
    pub fn rebuild_rates(&mut self) -> f64 {
        self.index.rebuild()
    }

    /// Draws the next event and its waiting time without applying it.
    #[inline]
    fn draw(&mut self) -> Result<(Event, f64)> {
        let total = self.index.total();
        if !(total > 0.0) {
            return Err(Error::Absorbed { t: self.t });
        }
        let dt = self.rng.exponential(total);
        let (slot, rem) = self.index.select_with_remainder(self.rng.open01() * total);
        Ok((self.slots.event_of(slot, rem, self.index.get(slot)), dt))
    }

    #[inline]
    fn apply(&mut self, params: &ModelParams, ev: Event) -> Result<()> {
        apply_event_mut(&mut self.eta, ev)?;
        self.events += 1;
        let sites = self.slots.sites;
        match ev {
            Event::BulkJump { x, dir } => {
                let y = (x as isize + dir.offset()) as usize;
                self.slots.refresh(&mut self.index, &self.eta, params, x);
                self.slots.refresh(&mut self.index, &self.eta, params, y);
            }
            Event::CreateLeft => {
                self.creations += 1;
                self.slots.refresh(&mut self.index, &self.eta, params, 1);
            }
            Event::CreateRight => {
                self.creations += 1;
                self.slots.refresh(&mut self.index, &self.eta, params, sites);
            }
            Event::AnnihilateLeft => {
                self.annihilations += 1;
                self.slots.refresh(&mut self.index, &self.eta, params, 1);
            }
            Event::AnnihilateRight => {
                self.annihilations += 1;
                self.slots.refresh(&mut self.index, &self.eta, params, sites);
            }
        }
        Ok(())
    }

    /// One exact step: exponential waiting time, rate-proportional event.
    pub fn step(&mut self, params: &ModelParams) -> Result<(Event, f64)> {
        let (ev, dt) = self.draw()?;
        self.t += dt;
        self.apply(params, ev)?;
        Ok((ev, dt))
    }

    /// Advances to exactly `horizon`, reporting each event to `observer`.
    /// The event that would overshoot is discarded, which leaves the law of
    /// the process unchanged. Returns `false` if the process got absorbed.
    pub fn run_until<O: Observer + ?Sized>(
        &mut self,
        params: &ModelParams,
        horizon: f64,
        observer: &mut O,
    ) -> Result<bool> {
        while self.t < horizon {
            let (ev, dt) = match self.draw() {
                Ok(v) => v,
                Err(Error::Absorbed { .. }) => {
                    self.t = horizon;
                    return Ok(false);
                }
                Err(e) => return Err(e),
            };
            if self.t + dt > horizon {
                self.t = horizon;
                break;
            }
            self.t += dt;
            self.apply(params, ev)?;
            observer.on_event(self.t, ev, &self.eta);
        }
        Ok(true)
    }
}

/// When snapshots are taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Explicit macroscopic times.
    Times(Vec<f64>),
    /// `0, step, 2 step, ...` up to the horizon.
    Uniform { step: f64 },
}

impl Schedule {
    /// Sorted snapshot times in `[0, horizon]`, always starting with 0.
    pub fn resolve(&self, horizon: f64) -> Vec<f64> {
        let mut times = vec![0.0];
        match self {
            Schedule::Times(ts) => {
                let mut ts: Vec<f64> = ts
                    .iter()
                    .copied()
                    .filter(|&t| t > 0.0 && t <= horizon)
                    .collect();
                ts.sort_by(f64::total_cmp);
                ts.dedup();
                times.extend(ts);
            }
            Schedule::Uniform { step } => {
                if *step > 0.0 {
                    let mut k = 1u64;
                    loop {
                        let t = k as f64 * step;
                        if t > horizon * (1.0 + 1e-12) {
                            break;
                        }
                        times.push(t.min(horizon));
                        k += 1;
                    }
                }
            }
        }
        times
    }
}

/// Snapshots of one run plus its event counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Configuration>,
    pub creations: u64,
    pub annihilations: u64,
    pub events: u64,
    /// Set when the total rate hit zero before the horizon.
    pub absorbed: bool,
}

impl Trajectory {
    pub fn last(&self) -> &Configuration {
        self.snapshots.last().expect("trajectory holds the initial snapshot")
    }
}

/// Runs to `horizon`, recording the state at each scheduled time (the state
/// after the last event at or before that time).
pub fn run(
    params: &ModelParams,
    init: Configuration,
    horizon: f64,
    schedule: &Schedule,
    rng: StreamRng,
) -> Result<Trajectory> {
    run_observed(params, init, horizon, schedule, rng, &mut ())
}

pub fn run_observed<O: Observer + ?Sized>(
    params: &ModelParams,
    init: Configuration,
    horizon: f64,
    schedule: &Schedule,
    rng: StreamRng,
    observer: &mut O,
) -> Result<Trajectory> {
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParams(format!("horizon {horizon} must be >= 0")));
    }
    let mut state = SimState::new(params, init, rng)?;
    let times = schedule.resolve(horizon);
    let mut snapshots = Vec::with_capacity(times.len());
    let mut absorbed = false;
    for &t in &times {
        if !absorbed && !state.run_until(params, t, observer)? {
            absorbed = true;
        }
        snapshots.push(state.eta().clone());
    }
    Ok(Trajectory {
        times,
        snapshots,
        creations: state.creations(),
        annihilations: state.annihilations(),
        events: state.events(),
        absorbed,
    })
}

/// Every event of a run, for observables that integrate along the path.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub initial: Configuration,
    pub events: Vec<(f64, Event)>,
    pub horizon: f64,
}

impl DenseTrajectory {
    /// Replays the path, calling `observer` after each event.
    pub fn replay<O: Observer + ?Sized>(&self, observer: &mut O) -> Result<Configuration> {
        let mut eta = self.initial.clone();
        for &(t, ev) in &self.events {
            apply_event_mut(&mut eta, ev)?;
            observer.on_event(t, ev, &eta);
        }
        Ok(eta)
    }
}

pub fn run_dense(
    params: &ModelParams,
    init: Configuration,
    horizon: f64,
    rng: StreamRng,
) -> Result<DenseTrajectory> {
    let mut state = SimState::new(params, init.clone(), rng)?;
    let mut events = Vec::new();
    let mut rec = |t: f64, ev: Event, _eta: &Configuration| events.push((t, ev));
    state.run_until(params, horizon, &mut rec)?;
    Ok(DenseTrajectory {
        initial: init,
        events,
        horizon,
    })
}

/// Seeds for an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub replicas: usize,
    pub master_seed: u64,
}

/// Runs `work(replica, init_rng, dynamics_rng)` for every replica,
/// possibly in parallel. Output order follows replica index and each
/// replica's result depends only on `(master_seed, replica)`.
pub fn ensemble_map<T, F>(spec: EnsembleSpec, work: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, StreamRng, StreamRng) -> T + Sync,
{
    (0..spec.replicas)
        .into_par_iter()
        .map(|r| {
            let init = StreamRng::new(spec.master_seed, r as u64, Purpose::InitialState);
            let dynamics = StreamRng::new(spec.master_seed, r as u64, Purpose::Dynamics);
            work(r, init, dynamics)
        })
        .collect()
}

/// Independent replicas from `init_sampler`, each run to `horizon`.
/// Errors are collected per replica.
pub fn ensemble_run<F>(
    params: &ModelParams,
    init_sampler: F,
    horizon: f64,
    schedule: &Schedule,
    spec: EnsembleSpec,
) -> Vec<Result<Trajectory>>
where
    F: Fn(&mut StreamRng) -> Result<Configuration> + Sync,
{
    ensemble_map(spec, |_, mut init_rng, dyn_rng| {
        let init = init_sampler(&mut init_rng)?;
        run(params, init, horizon, schedule, dyn_rng)
    })
}

/// Long-format CSV: `replica,t,x,eta`.
pub fn write_trajectories_csv<W: Write>(
    out: W,
    trajectories: &[(usize, &Trajectory)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replica", "t", "x", "eta"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for (replica, traj) in trajectories {
        for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
            for (x, k) in snap.iter() {
                w.write_record(&[replica.to_string(), t.to_string(), x.to_string(), k.to_string()])
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON array of `{replica, trajectory}` objects.
pub fn write_trajectories_json<W: Write>(out: W, trajectories: &[(usize, &Trajectory)]) -> Result<()> {
    #[derive(Serialize)]
    struct Entry<'a> {
        replica: usize,
        trajectory: &'a Trajectory,
    }
    let entries: Vec<Entry> = trajectories
        .iter()
        .map(|&(replica, trajectory)| Entry { replica, trajectory })
        .collect();
    serde_json::to_writer(out, &entries).map_err(|e| Error::Io(e.to_string()))
}

/// Compact binary snapshots: `u64` count, then per snapshot an `f64` time
/// followed by the configuration's binary form (all little-endian).
pub fn write_trajectory_binary<W: Write>(mut out: W, traj: &Trajectory) -> Result<()> {
    out.write_all(&(traj.times.len() as u64).to_le_bytes())?;
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        out.write_all(&t.to_le_bytes())?;
        snap.write_binary(&mut out)?;
    }
    Ok(())
}

pub fn read_trajectory_binary<R: std::io::Read>(mut input: R) -> Result<Vec<(f64, Configuration)>> {
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut b8)?;
        let t = f64::from_le_bytes(b8);
        out.push((t, Configuration::read_binary(&mut input)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{event_rate, total_rate};
    use crate::rates::RateFunction;
    use std::sync::Arc;

    fn lin(n: usize, theta: f64, alpha: f64) -> ModelParams {
        ModelParams::new(n, theta, alpha, Arc::new(RateFunction::linear())).unwrap()
    }

    #[test]
    fn single_admissible_event() {
        // One particle on site 1 of a 2-site lattice with no reservoirs.
        let p = ModelParams::general(3, 1.0, 0.0, 0.0, 0.0, 0.0, Arc::new(RateFunction::linear()))
            .unwrap();
        let mut s =
            SimState::new(&p, Configuration::from_occupancy(vec![1, 0]), StreamRng::new(1, 0, Purpose::Test))
                .unwrap();
        let (ev, dt) = s.step(&p).unwrap();
        assert_eq!(ev, Event::BulkJump { x: 1, dir: Direction::Right });
        assert!(dt > 0.0);
    }

    #[test]
    fn empty_lattice_only_creates_left() {
        let p = lin(8, 1.0, 1.0);
        for seed in 0..50 {
            let mut s =
                SimState::new(&p, Configuration::empty(7), StreamRng::new(seed, 0, Purpose::Test)).unwrap();
            assert_eq!(s.step(&p).unwrap().0, Event::CreateLeft);
        }
    }

    #[test]
    fn absorbed_when_nothing_can_happen() {
        let p = lin(6, 1.0, 0.0);
        let mut s =
            SimState::new(&p, Configuration::empty(5), StreamRng::new(1, 0, Purpose::Test)).unwrap();
        assert!(matches!(s.step(&p), Err(Error::Absorbed { .. })));
        let traj = run(&p, Configuration::empty(5), 1.0, &Schedule::Uniform { step: 0.25 }, StreamRng::new(1, 0, Purpose::Test)).unwrap();
        assert!(traj.absorbed);
        assert_eq!(traj.snapshots.len(), 5);
    }

    #[test]
    fn zero_horizon_keeps_initial_snapshot() {
        let p = lin(6, 1.0, 1.0);
        let init = Configuration::from_occupancy(vec![1, 2, 3, 4, 5]);
        let traj = run(&p, init.clone(), 0.0, &Schedule::Uniform { step: 0.1 }, StreamRng::new(3, 0, Purpose::Test)).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.snapshots, vec![init]);
    }

    #[test]
    fn closed_system_conserves_mass() {
        let p = ModelParams::general(12, 1.0, 0.0, 0.0, 0.0, 0.0, Arc::new(RateFunction::linear()))
            .unwrap();
        let init = Configuration::from_occupancy(vec![3; 11]);
        let traj = run(&p, init, 0.5, &Schedule::Uniform { step: 0.01 }, StreamRng::new(9, 0, Purpose::Test)).unwrap();
        assert!(traj.events > 1000);
        assert!(traj.snapshots.iter().all(|s| s.total() == 33));
    }

    #[test]
    fn particle_bookkeeping() {
        let g = Arc::new(RateFunction::capped(2).unwrap());
        let p = ModelParams::general(10, 1.0, 1.0, 0.5, 0.7, 1.0, g).unwrap();
        let init = Configuration::from_occupancy(vec![1; 9]);
        let mut s = SimState::new(&p, init.clone(), StreamRng::new(4, 0, Purpose::Test)).unwrap();
        for _ in 0..20_000 {
            s.step(&p).unwrap();
            let want = init.total() + s.creations() - s.annihilations();
            assert_eq!(s.eta().total(), want);
            assert_eq!(s.eta().occupancy().iter().map(|&v| v as u64).sum::<u64>(), want);
        }
    }

    #[test]
    fn rate_index_tracks_configuration() {
        let g = Arc::new(RateFunction::linear());
        let p = ModelParams::general(9, 1.5, 0.8, 0.2, 0.3, 1.1, g).unwrap();
        let mut s = SimState::new(&p, Configuration::from_occupancy(vec![2; 8]), StreamRng::new(6, 0, Purpose::Test))
            .unwrap();
        for _ in 0..5_000 {
            s.step(&p).unwrap();
        }
        let want = total_rate(s.eta(), &p);
        assert!((s.total_rate() - want).abs() <= 1e-9 * want);
        // Leaf-by-leaf agreement with the microscopic rates.
        for x in 1..=8 {
            let want: f64 = [Direction::Left, Direction::Right]
                .into_iter()
                .map(|dir| event_rate(s.eta(), Event::BulkJump { x, dir }, &p))
                .sum();
            assert!((s.rate_index().get(x - 1) - want).abs() < 1e-9);
        }
        for (i, ev) in [Event::CreateLeft, Event::CreateRight, Event::AnnihilateLeft, Event::AnnihilateRight]
            .into_iter()
            .enumerate()
        {
            assert!((s.rate_index().get(8 + i) - event_rate(s.eta(), ev, &p)).abs() < 1e-9);
        }
    }

    #[test]
    fn event_frequencies_match_rates() {
        // Frozen configuration: draw repeatedly without applying.
        let g = Arc::new(RateFunction::linear());
        let p = ModelParams::general(5, 1.0, 0.9, 0.4, 0.6, 1.0, g).unwrap();
        let eta = Configuration::from_occupancy(vec![2, 0, 1, 3]);
        let mut s = SimState::new(&p, eta.clone(), StreamRng::new(8, 0, Purpose::Test)).unwrap();
        let events = Event::all(4);
        let total = total_rate(&eta, &p);
        let draws = 1_000_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let (ev, _) = s.draw().unwrap();
            *counts.entry(ev).or_insert(0u64) += 1;
        }
        for ev in events {
            let p_ev = event_rate(&eta, ev, &p) / total;
            let c = *counts.get(&ev).unwrap_or(&0) as f64;
            let sd = (draws as f64 * p_ev * (1.0 - p_ev)).sqrt();
            assert!((c - draws as f64 * p_ev).abs() <= 4.0 * sd + 1e-9, "{ev}: {c} vs {}", draws as f64 * p_ev);
        }
    }

    #[test]
    fn ensemble_is_reproducible() {
        let p = lin(10, 1.0, 1.0);
        let spec = EnsembleSpec { replicas: 4, master_seed: 77 };
        let sampler = |_: &mut StreamRng| Ok(Configuration::from_occupancy(vec![1; 9]));
        let sched = Schedule::Uniform { step: 0.05 };
        let a = ensemble_run(&p, sampler, 0.2, &sched, spec);
        let b = ensemble_run(&p, sampler, 0.2, &sched, spec);
        assert_eq!(a, b);
        let single = ensemble_run(&p, sampler, 0.2, &sched, EnsembleSpec { replicas: 1, master_seed: 77 });
        let direct = run(
            &p,
            Configuration::from_occupancy(vec![1; 9]),
            0.2,
            &sched,
            StreamRng::new(77, 0, Purpose::Dynamics),
        );
        assert_eq!(single[0], direct);
        assert_eq!(a[0], direct);
    }

    #[test]
    fn dense_replay_matches_final_state() {
        let p = lin(10, 1.0, 1.0);
        let init = Configuration::from_occupancy(vec![1; 9]);
        let dense = run_dense(&p, init.clone(), 0.1, StreamRng::new(12, 0, Purpose::Dynamics)).unwrap();
        let traj = run(&p, init, 0.1, &Schedule::Times(vec![0.1]), StreamRng::new(12, 0, Purpose::Dynamics)).unwrap();
        assert_eq!(&dense.replay(&mut ()).unwrap(), traj.last());
        assert!(dense.events.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn binary_trajectory_round_trip() {
        let p = lin(6, 1.0, 1.0);
        let traj = run(&p, Configuration::empty(5), 0.3, &Schedule::Uniform { step: 0.1 }, StreamRng::new(2, 0, Purpose::Dynamics)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_binary(&mut buf, &traj).unwrap();
        let back = read_trajectory_binary(&buf[..]).unwrap();
        assert_eq!(back.len(), traj.times.len());
        for ((t, c), (t2, c2)) in back.iter().zip(traj.times.iter().zip(&traj.snapshots)) {
            assert_eq!(t, t2);
            assert_eq!(c, c2);
        }
        let mut csv_buf = Vec::new();
        write_trajectories_csv(&mut csv_buf, &[(0, &traj)]).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.starts_with("replica,t,x,eta\n0,0,1,0\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 5);
    }
}
