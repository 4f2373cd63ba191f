use std::sync::Arc;

use proptest::prelude::*;
use zrp_core::measures::{fugacity_profile, GrandCanonical, ProductSampler, ProfileSource};
use zrp_core::process::{apply_event, event_rate, total_rate, Configuration, Event, ModelParams};
use zrp_core::rate_index::RateIndex;
use zrp_core::rates::RateFunction;
use zrp_core::rng::{Purpose, StreamRng};
use zrp_core::sim::{ensemble_map, run, run_dense, EnsembleSpec, Schedule, SimState};

fn linear_params(n: usize, alpha: f64) -> ModelParams {
    ModelParams::new(n, 1.0, alpha, Arc::new(RateFunction::linear())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rate_index_matches_naive_prefix_sums(
        values in proptest::collection::vec(0.0f64..5.0, 1..60),
        updates in proptest::collection::vec((0usize..60, 0.0f64..5.0), 0..40),
        u in 0.0f64..1.0,
    ) {
        let mut idx = RateIndex::new(values.clone());
        let mut naive = values.clone();
        for (i, v) in updates {
            let i = i % naive.len();
            idx.set(i, v);
            naive[i] = v;
        }
        let total: f64 = naive.iter().sum();
        prop_assert!((idx.total() - total).abs() <= 1e-9 * total.max(1.0));
        if total > 0.0 {
            let target = u * total;
            let slot = idx.select(target);
            prop_assert!(naive[slot] > 0.0);
            let before: f64 = naive[..slot].iter().sum();
            prop_assert!(before <= target + 1e-9 * total);
            prop_assert!(target <= before + naive[slot] + 1e-9 * total);
        }
    }

    #[test]
    fn simulation_keeps_particle_bookkeeping(
        n in 3usize..30,
        alpha in 0.0f64..3.0,
        seed in 0u64..1000,
        occ in proptest::collection::vec(0u32..5, 29),
    ) {
        let p = linear_params(n, alpha);
        let eta0 = Configuration::from_occupancy(occ[..n - 1].to_vec());
        let mut s = SimState::new(&p, eta0.clone(), StreamRng::new(seed, 0, Purpose::Dynamics)).unwrap();
        s.run_until(&p, 0.02, &mut ()).unwrap();
        let net = s.creations() as i64 - s.annihilations() as i64;
        prop_assert_eq!(s.eta().total() as i64, eta0.total() as i64 + net);
        prop_assert!((s.total_rate() - total_rate(s.eta(), &p)).abs() <= 1e-9 * s.total_rate().max(1.0));
    }

    #[test]
    fn dense_replay_reproduces_path(n in 3usize..15, seed in 0u64..500) {
        let p = linear_params(n, 1.0);
        let eta0 = Configuration::from_occupancy(vec![1; n - 1]);
        let dense = run_dense(&p, eta0.clone(), 0.05, StreamRng::new(seed, 1, Purpose::Dynamics)).unwrap();
        let mut s = SimState::new(&p, eta0, StreamRng::new(seed, 1, Purpose::Dynamics)).unwrap();
        s.run_until(&p, 0.05, &mut ()).unwrap();
        prop_assert_eq!(&dense.replay(&mut ()).unwrap(), s.eta());
        prop_assert_eq!(dense.events.len() as u64, s.events());
    }

    #[test]
    fn applied_events_have_positive_rate(n in 3usize..12, occ in proptest::collection::vec(0u32..3, 11)) {
        // Every reservoir rate is positive, so a zero rate can only come
        // from an empty departure site.
        let p = ModelParams::general(n, 1.0, 0.7, 0.3, 0.5, 1.0, Arc::new(RateFunction::linear())).unwrap();
        let eta = Configuration::from_occupancy(occ[..n - 1].to_vec());
        for ev in Event::all(n - 1) {
            let r = event_rate(&eta, ev, &p);
            prop_assert_eq!(r > 0.0, apply_event(&eta, ev).is_ok(), "{}", ev);
        }
    }
}

#[test]
fn ensembles_are_reproducible_and_order_preserving() {
    let p = linear_params(12, 1.0);
    let spec = EnsembleSpec { replicas: 6, master_seed: 99 };
    let go = || {
        ensemble_map(spec, |r, _, dynamics| {
            let mut s = SimState::new(&p, Configuration::empty(11), dynamics).unwrap();
            s.run_until(&p, 0.1, &mut ()).unwrap();
            (r, s.eta().clone(), s.events())
        })
    };
    let a = go();
    assert_eq!(a, go());
    assert!(a.iter().enumerate().all(|(i, x)| x.0 == i));
    // Distinct replicas use distinct streams.
    assert!(a.windows(2).any(|w| w[0].2 != w[1].2));
}

#[test]
fn stationary_start_keeps_mean_mass() {
    // Started from the product invariant law, E[total particles] stays at
    // its stationary value; compare against the exact sum of densities.
    let p = linear_params(10, 1.0);
    let gc = GrandCanonical::new(p.g_handle());
    let prof = fugacity_profile(&p).unwrap();
    let expected: f64 = prof.values.iter().sum();
    let sampler = ProductSampler::new(&gc, ProfileSource::Fugacities(prof.values.clone())).unwrap();
    let spec = EnsembleSpec { replicas: 3000, master_seed: 4 };
    let totals: Vec<f64> = ensemble_map(spec, |_, mut init, dynamics| {
        let traj = run(&p, sampler.sample(&mut init), 0.3, &Schedule::Times(vec![0.3]), dynamics).unwrap();
        traj.last().total() as f64
    });
    let m = totals.iter().sum::<f64>() / totals.len() as f64;
    // Poisson marginals: the total has variance equal to its mean.
    let se = (expected / totals.len() as f64).sqrt();
    assert!((m - expected).abs() < 4.0 * se, "mean {m} expected {expected} se {se}");
}

#[test]
fn empty_system_without_creation_is_absorbing() {
    let p = linear_params(8, 0.0);
    let traj = run(&p, Configuration::empty(7), 1.0, &Schedule::Uniform { step: 0.5 }, StreamRng::new(1, 0, Purpose::Dynamics))
        .unwrap();
    assert!(traj.absorbed);
    assert_eq!(traj.events, 0);
    assert!(traj.snapshots.iter().all(|c| c.total() == 0));
}
