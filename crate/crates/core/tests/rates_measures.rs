use std::sync::Arc;

use proptest::prelude::*;
use zrp_core::measures::{
    fugacity_profile, specialized_fugacity, stationary_balance_residual, GrandCanonical,
};
use zrp_core::process::{total_rate, Configuration, ModelParams};
use zrp_core::rates::RateFunction;

fn ln_factorial(k: u64) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

#[test]
fn linear_rates_give_poisson_marginals() {
    let gc = GrandCanonical::new(Arc::new(RateFunction::linear()));
    for &phi in &[0.1, 0.7, 1.5, 4.0] {
        for k in 0..20u64 {
            let poisson = (-phi + k as f64 * f64::ln(phi) - ln_factorial(k)).exp();
            assert!((gc.pmf(phi, k).unwrap() - poisson).abs() < 1e-13, "phi {phi} k {k}");
        }
        assert!((gc.density(phi).unwrap() - phi).abs() < 1e-12);
        assert!((gc.moment(phi, 2).unwrap() - (phi + phi * phi)).abs() < 1e-10);
    }
}

#[test]
fn constant_rates_give_geometric_marginals() {
    let gc = GrandCanonical::new(Arc::new(RateFunction::constant()));
    for &phi in &[0.05f64, 0.4, 0.8] {
        for k in 0..30u64 {
            let geo = (1.0 - phi) * phi.powi(k as i32);
            assert!((gc.pmf(phi, k).unwrap() - geo).abs() < 1e-13);
        }
        assert!((gc.density(phi).unwrap() - phi / (1.0 - phi)).abs() < 1e-10);
    }
    assert!(gc.density(1.0).is_err());
}

#[test]
fn capped_rates_match_direct_series() {
    let g = Arc::new(RateFunction::capped(3).unwrap());
    let gc = GrandCanonical::new(Arc::clone(&g));
    let phi = 2.2;
    // Direct weights phi^k / prod_{j<=k} min(j, 3), summed far into the tail.
    let mut w = vec![1.0f64];
    for k in 1..2000u64 {
        let prev = w[k as usize - 1];
        w.push(prev * phi / (k.min(3) as f64));
    }
    let z: f64 = w.iter().sum();
    let mean: f64 = w.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>() / z;
    assert!((gc.partition_z(phi).unwrap() - z).abs() < 1e-10 * z);
    assert!((gc.density(phi).unwrap() - mean).abs() < 1e-10 * mean);
    assert_eq!(g.phi_star(), 3.0);
}

#[test]
fn specialized_profile_is_linear_in_site() {
    let p = ModelParams::new(50, 1.0, 0.8, Arc::new(RateFunction::linear())).unwrap();
    let prof = fugacity_profile(&p).unwrap();
    for x in 1..50 {
        let expected = 0.8 * (2.0 - (x as f64 + 1.0) / 50.0);
        assert!((prof.at(x) - expected).abs() < 1e-14);
        assert!((specialized_fugacity(50, 1.0, 0.8, x) - expected).abs() < 1e-14);
    }
}

#[test]
fn profile_refuses_fugacity_beyond_radius() {
    let p = ModelParams::new(20, 1.0, 0.8, Arc::new(RateFunction::constant())).unwrap();
    assert!(fugacity_profile(&p).is_err());
}

fn family(i: usize) -> Arc<RateFunction> {
    Arc::new(match i {
        0 => RateFunction::linear(),
        1 => RateFunction::constant(),
        _ => RateFunction::capped(3).unwrap(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn phi_inverse_inverts_density(fam in 0usize..3, rho in 0.0f64..20.0) {
        let gc = GrandCanonical::new(family(fam));
        let phi = gc.phi_inverse(rho).unwrap();
        let back = gc.density(phi).unwrap();
        prop_assert!((back - rho).abs() <= 1e-9 * rho.max(1.0), "rho {} back {}", rho, back);
    }

    #[test]
    fn pmf_sums_to_one(fam in 0usize..3, frac in 0.01f64..0.9) {
        let g = family(fam);
        let phi = if g.phi_star().is_finite() { frac * g.phi_star() } else { 10.0 * frac };
        let gc = GrandCanonical::new(g);
        let total: f64 = (0..4000u64).map(|k| gc.pmf(phi, k).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn product_measure_balances_generator(
        fam in 0usize..3,
        n in 3usize..12,
        theta in prop_oneof![Just(1.0), Just(1.5), Just(2.0)],
        a in 0.05f64..0.3,
        b in 0.0f64..0.3,
        l in 0.0f64..1.5,
        d in 0.2f64..1.5,
        occ in proptest::collection::vec(0u32..7, 11),
    ) {
        let p = ModelParams::general(n, theta, a, b, l, d, family(fam)).unwrap();
        let prof = fugacity_profile(&p).unwrap();
        let eta = Configuration::from_occupancy(occ[..n - 1].to_vec());
        let res = stationary_balance_residual(&eta, &p, &prof.values).unwrap();
        let lam = total_rate(&eta, &p.clone().with_diffusive(false));
        prop_assert!(res.abs() <= 1e-10 * lam, "residual {} lambda {}", res, lam);
    }

    #[test]
    fn perturbed_profile_breaks_balance(n in 4usize..10, bump in 0.05f64..0.3) {
        // A non-stationary fugacity profile must leave a visible residual on
        // some configuration.
        let p = ModelParams::new(n, 1.0, 0.5, family(0)).unwrap();
        let mut values = fugacity_profile(&p).unwrap().values;
        values[0] *= 1.0 + bump;
        let worst = (0..n - 1)
            .map(|x| {
                let mut occ = vec![0u32; n - 1];
                occ[x] = 1;
                stationary_balance_residual(&Configuration::from_occupancy(occ), &p, &values).unwrap().abs()
            })
            .fold(0.0, f64::max);
        prop_assert!(worst > 1e-6);
    }
}
