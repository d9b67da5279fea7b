use proptest::prelude::*;

use semibs::field::{lp_norm, sup_t_lp_norm, Grid, SpaceTimeField};
use semibs::kernel::{kernel_dx_lp_norm, kernel_lp_norm};
use semibs::nonlinearity::Nonlinearity;
use semibs::oracle::exact_drift_reaction;
use semibs::picard::{choose_local_horizon, picard_solve, Envelope, PicardConfig};
use semibs::transform::{EquationForm, GaussianBump, HeatProblem, InitialData};

const HORIZON: f64 = 0.1;

fn small_grid() -> Grid {
    Grid::new(-8.0, 8.0, 256, HORIZON, 41, 1e-12).unwrap()
}

fn bump(weight: f64) -> InitialData {
    InitialData::Gaussians(vec![GaussianBump {
        weight,
        center: 0.0,
        time: 0.5,
    }])
}

proptest! {
    #[test]
    fn kernel_norms_are_self_similar(p in 1.0f64..8.0, t in 0.01f64..10.0) {
        let plain = kernel_lp_norm(p, t).unwrap() / kernel_lp_norm(p, 1.0).unwrap();
        let dx = kernel_dx_lp_norm(p, t).unwrap() / kernel_dx_lp_norm(p, 1.0).unwrap();
        let a = (1.0 - 1.0 / p) / 2.0;
        prop_assert!((plain / t.powf(-a) - 1.0).abs() < 1e-12);
        prop_assert!((dx / t.powf(-a - 0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn certified_lipschitz_bounds_difference_quotients(
        q in 1.0f64..4.0,
        r in 0.1f64..5.0,
        amp in -3.0f64..3.0,
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        prop_assume!((a - b).abs() > 1e-9);
        for f in [Nonlinearity::clamped_power(q, r).unwrap(), Nonlinearity::sat_sin(amp).unwrap()] {
            let quotient = (f.eval(a) - f.eval(b)).abs() / (a - b).abs();
            prop_assert!(quotient <= f.certified_lipschitz() * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn local_horizon_meets_the_budget(a in 0.0f64..20.0, b in 0.0f64..20.0, safety in 0.05f64..0.95) {
        let env = Envelope { sqrt_coeff: a, linear_coeff: b };
        let t = env.local_horizon(safety, 1e6);
        prop_assert!(t > 0.0);
        prop_assert!(env.bound(t) <= safety * (1.0 + 1e-10));
        if t < 1e6 {
            prop_assert!(env.bound(t) >= safety * (1.0 - 1e-10));
        }
    }

    #[test]
    fn local_horizon_shrinks_with_lipschitz(l in 0.0f64..50.0, dl in 0.01f64..10.0) {
        let cfg = PicardConfig::default();
        for form in [EquationForm::Source, EquationForm::Flux] {
            let t0 = choose_local_horizon(l, form, &cfg, 10.0).unwrap();
            let t1 = choose_local_horizon(l + dl, form, &cfg, 10.0).unwrap();
            prop_assert!(t1 < t0);
        }
    }

    #[test]
    fn lp_norm_is_a_norm(
        u in prop::collection::vec(-5.0f64..5.0, 256),
        v in prop::collection::vec(-5.0f64..5.0, 256),
        c in -4.0f64..4.0,
        p in 1.0f64..6.0,
    ) {
        let grid = small_grid();
        let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let scaled: Vec<f64> = u.iter().map(|a| c * a).collect();
        let nu = lp_norm(&u, p, &grid).unwrap();
        let nv = lp_norm(&v, p, &grid).unwrap();
        prop_assert!(lp_norm(&sum, p, &grid).unwrap() <= (nu + nv) * (1.0 + 1e-12));
        prop_assert!((lp_norm(&scaled, p, &grid).unwrap() - c.abs() * nu).abs() <= 1e-10 * (1.0 + nu));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn linear_problems_match_the_exact_solution(drift in -1.0f64..1.0, reaction in -1.0f64..1.0, weight in 0.1f64..2.0) {
        let grid = small_grid();
        let problem = HeatProblem::new(
            bump(weight), drift, reaction, Nonlinearity::zero(), EquationForm::Source, 0.0, 2.0, HORIZON,
        ).unwrap();
        let (u, report) = picard_solve(&problem, &grid, &PicardConfig::default()).unwrap();
        prop_assert!(report.certificate_holds());
        let exact = exact_drift_reaction(&problem, &grid.xs(), HORIZON).unwrap();
        let last = u.slice(grid.n_t() - 1);
        let interior = grid.trust_interior();
        let err = last[interior.clone()].iter().zip(&exact[interior])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(err < 1e-4 * weight, "err {err}");
    }

    #[test]
    fn semilinear_solves_carry_a_valid_certificate(amp in -2.0f64..2.0, weight in 0.1f64..2.0, flux in any::<bool>()) {
        let grid = small_grid();
        let f = Nonlinearity::sat_sin(amp).unwrap();
        let problem = if flux {
            HeatProblem::flux_form(bump(weight), f, 2.0, HORIZON)
        } else {
            HeatProblem::source_form(bump(weight), f, 2.0, HORIZON)
        }.unwrap();
        let (u, report) = picard_solve(&problem, &grid, &PicardConfig::default()).unwrap();
        prop_assert!(report.certificate_holds());
        prop_assert!(report.final_residual <= 1e-8);
        prop_assert!(sup_t_lp_norm(&u, 2.0).unwrap().is_finite());
        prop_assert!(report.subintervals.iter().all(|s| s.contraction_ratio < 1.0));
    }

    #[test]
    fn zero_data_with_vanishing_nonlinearity_stays_zero(amp in -2.0f64..2.0) {
        let grid = small_grid();
        let problem = HeatProblem::source_form(InitialData::Zero, Nonlinearity::sat_sin(amp).unwrap(), 2.0, HORIZON).unwrap();
        let (u, _) = picard_solve(&problem, &grid, &PicardConfig::default()).unwrap();
        prop_assert!(u.values().iter().all(|&v| v == 0.0));
        prop_assert_eq!(&u, &SpaceTimeField::zeros(&grid));
    }
}
