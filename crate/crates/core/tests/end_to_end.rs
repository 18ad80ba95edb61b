use proptest::prelude::*;

use dcf_netcalc::bounds::{ArrivalModel, BoundProblem, GridConfig, Variant, DEFAULT_X_MAX};
use dcf_netcalc::characterize::{fit_sigma_rho, poisson_sigma_rho, FitOptions, MgfEnvelope};
use dcf_netcalc::mac80211::{
    impairment_envelope, impairment_fit_for_channel, impairment_log_mgf, oracle_impairment_mgf, solve_fixed_point,
    ImpairmentChannel, Params80211,
};

fn problem(lambda: f64, grid: &GridConfig) -> BoundProblem {
    BoundProblem::new(&ArrivalModel::Poisson { lambda }, &Params80211::default(), grid).unwrap()
}

fn small_grid() -> GridConfig {
    GridConfig {
        n_theta_arrival: 12,
        n_theta_impairment: 12,
        n_rate: 16,
        ..Default::default()
    }
}

#[test]
fn linear_envelope_fits_exactly() {
    let (lambda, theta) = (0.04, 0.7);
    let exact = poisson_sigma_rho(lambda, theta).unwrap();
    let env = MgfEnvelope::from_fn(theta, move |t| exact.rho * t as f64);
    let fit = fit_sigma_rho(&env, FitOptions::default()).unwrap();
    assert!((fit.sigma_rho.rho - exact.rho).abs() < 1e-12);
    assert!(fit.sigma_rho.sigma.abs() < 1e-12);
    assert_eq!(fit.t_star, 2);
}

#[test]
fn impairment_fit_dominates_envelope_up_to_t_star() {
    let ch = solve_fixed_point(&Params80211::default()).unwrap().channel();
    for theta in [0.05, 0.1, 0.5, 1.0] {
        let fit = impairment_fit_for_channel(ch, theta, FitOptions::default()).unwrap();
        let env = impairment_envelope(ch, theta);
        let sr = fit.sigma_rho;
        for t in 0..=fit.t_star {
            let y = env.y(t).unwrap();
            assert!(y <= sr.rho * t as f64 + sr.sigma + 1e-9, "theta={theta} t={t}: {y}");
        }
    }
}

#[test]
fn refined_variants_never_exceed_bound1() {
    let p = problem(0.05, &small_grid());
    let b1 = p.bound(Variant::Bound1).unwrap();
    for v in [Variant::Bound2, Variant::Bound3, Variant::Bound4] {
        let b = p.bound(v).unwrap();
        for x in (0..300).step_by(7) {
            assert!(b.evaluate(x) <= b1.evaluate(x) + 1e-15, "{v} at {x}");
        }
    }
}

#[test]
fn quantiles_grow_with_load() {
    let grid = small_grid();
    let mut last = 0;
    for lambda in [0.02, 0.04, 0.06, 0.075] {
        let q = problem(lambda, &grid)
            .bound(Variant::Bound4)
            .unwrap()
            .quantile(0.1, DEFAULT_X_MAX)
            .unwrap();
        assert!(q >= last, "lambda={lambda}: {q} < {last}");
        last = q;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_mgf_matches_enumeration(
        p_t in 0.0f64..1.0,
        p_s in 0.0f64..1.0,
        l in 1u32..=4,
        t in 1u64..=4,
        log_theta in -3.0f64..1.0,
    ) {
        let ch = ImpairmentChannel::new(p_t, p_s, l).unwrap();
        let theta = 10f64.powf(log_theta);
        let formula = impairment_log_mgf(&ch, theta, t).unwrap();
        let oracle = oracle_impairment_mgf(&ch, theta, t).unwrap().ln();
        prop_assert!((formula - oracle).abs() <= 1e-9 * oracle.abs().max(1.0), "{formula} vs {oracle}");
    }

    #[test]
    fn bound_is_a_nonincreasing_probability(lambda in 0.005f64..0.075) {
        let p = problem(lambda, &small_grid());
        for v in Variant::ALL {
            let b = p.bound(v).unwrap();
            let mut prev = 1.0;
            for x in (0..400).step_by(13) {
                let y = b.evaluate(x);
                prop_assert!((0.0..=1.0).contains(&y));
                prop_assert!(y <= prev + 1e-15);
                prev = y;
            }
        }
    }
}
