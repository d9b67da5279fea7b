//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout; exits non-zero on any failure.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semibs::cli::parse_config;
use semibs::field::{lp_norm, sup_t_lp_norm, DuhamelOperator, Grid, SpaceTimeField};
use semibs::kernel::{heat_kernel, heat_kernel_dx, kernel_dx_lp_norm, kernel_lp_norm, KernelQuery, LpExponent};
use semibs::nonlinearity::Nonlinearity;
use semibs::oracle::{
    bs_closed_form, exact_drift_reaction, fd_solve, kernel_norm_by_quadrature, power_law_slope, FdConfig,
};
use semibs::picard::{measure_contraction, picard_solve, solution_map_lipschitz, PicardConfig, GRID_ALLOWANCE};
use semibs::transform::{
    from_heat_coords, reduce_to_heat, to_heat_coords, EquationForm, GaussianBump, HeatProblem, InitialData,
    ModelSpec, Payoff,
};
use semibs::Error;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn gaussians(bumps: &[(f64, f64, f64)]) -> InitialData {
    InitialData::Gaussians(
        bumps
            .iter()
            .map(|&(weight, center, time)| GaussianBump { weight, center, time })
            .collect(),
    )
}

fn trust_max(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.trust_interior().map(|j| (a[j] - b[j]).abs()).fold(0.0, f64::max)
}

/// 1. Closed-form kernel norms against quadrature, and their t-scaling.
fn kernel_norm_identities() -> Outcome {
    let ts = [0.01, 0.1, 1.0, 10.0];
    let (mut worst_rel, mut worst_slope) = (0.0f64, 0.0f64);
    for p in [1.0, 2.0, 3.0] {
        let mut plain = Vec::new();
        let mut dx = Vec::new();
        for t in ts {
            let qp = kernel_norm_by_quadrature(p, t, false).unwrap();
            let qd = kernel_norm_by_quadrature(p, t, true).unwrap();
            worst_rel = worst_rel.max((kernel_lp_norm(p, t).unwrap() - qp).abs() / qp);
            worst_rel = worst_rel.max((kernel_dx_lp_norm(p, t).unwrap() - qd).abs() / qd);
            plain.push(qp);
            dx.push(qd);
        }
        worst_slope = worst_slope.max((power_law_slope(&ts, &plain) + (1.0 - 1.0 / p) / 2.0).abs());
        worst_slope = worst_slope.max((power_law_slope(&ts, &dx) + (1.0 - 1.0 / (2.0 * p))).abs());
    }
    outcome(
        worst_rel < 1e-8 && worst_slope < 1e-6,
        format!("max rel err {worst_rel:.2e} (< 1e-8), max slope err {worst_slope:.2e} (< 1e-6)"),
    )
}

/// Bounded smooth space-time field from a seed, as a function of (x, t).
fn random_source(seed: u64) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<[f64; 5]> = (0..5)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(0.3..2.0),
                rng.gen_range(0.0..20.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    move |x, t| {
        bumps
            .iter()
            .map(|[a, c, w, om, ph]| a * (-((x - c) / w).powi(2) / 2.0).exp() * (1.0 + 0.5 * (om * t + ph).cos()))
            .sum()
    }
}

/// Largest `‖D G‖ / ‖G‖` (divided by `T` resp. `√T`) over the random fields.
fn duhamel_constants(n_x: usize, n_t: usize, p: f64, fields: usize) -> (f64, f64) {
    let t_end = 0.25;
    let grid = Grid::new(-12.0, 12.0, n_x, t_end, n_t, 1e-10).unwrap();
    let op = DuhamelOperator::new(&grid, n_t - 1).unwrap();
    let (mut c_plain, mut c_dx) = (0.0f64, 0.0f64);
    for seed in 0..fields as u64 {
        let g = SpaceTimeField::from_fn(&grid, random_source(seed)).unwrap();
        let slices: Vec<Vec<f64>> = g.slices().map(<[f64]>::to_vec).collect();
        let g_norm = sup_t_lp_norm(&g, p).unwrap();
        let plain = SpaceTimeField::from_slices(&grid, &op.apply(Some(&slices), None)).unwrap();
        let deriv = SpaceTimeField::from_slices(&grid, &op.apply(None, Some(&slices))).unwrap();
        c_plain = c_plain.max(sup_t_lp_norm(&plain, p).unwrap() / (t_end * g_norm));
        c_dx = c_dx.max(sup_t_lp_norm(&deriv, p).unwrap() / (t_end.sqrt() * g_norm));
    }
    (c_plain, c_dx)
}

/// 2. Duhamel estimates on 100 random bounded fields.
fn duhamel_estimates() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for p in [1.0, 2.0] {
        let (plain_c, dx_c) = duhamel_constants(256, 33, p, 100);
        let (plain_f, dx_f) = duhamel_constants(511, 65, p, 100);
        let drift = (dx_f / dx_c - 1.0).abs();
        let ok = plain_c <= 1.02 && plain_f <= 1.02 && drift <= 0.10;
        passed &= ok;
        parts.push(format!(
            "p={p}: C_plain {plain_c:.4}/{plain_f:.4} (<= 1.02), C_dx {dx_c:.4}/{dx_f:.4} (change {:.2}% <= 10%)",
            100.0 * drift
        ));
    }
    outcome(passed, parts.join("; "))
}

/// 3. Contraction certificate for L = 1 nonlinearities in both forms.
fn contraction_certificate() -> Outcome {
    let cfg = PicardConfig::default();
    let data = gaussians(&[(0.5, 0.0, 0.4)]);
    let mut passed = true;
    let mut parts = Vec::new();
    for form in [EquationForm::Source, EquationForm::Flux] {
        let nl = Nonlinearity::sat_sin(1.0).unwrap();
        let horizon = 0.4;
        let pb = match form {
            EquationForm::Source => HeatProblem::source_form(data.clone(), nl, 2.0, horizon),
            EquationForm::Flux => HeatProblem::flux_form(data.clone(), nl, 2.0, horizon),
        }
        .unwrap();
        let grid = Grid::new(-12.0, 12.0, 512, horizon, 161, 1e-10).unwrap();
        let scan = measure_contraction(&pb, &grid, &cfg, 50, 2024).unwrap();
        let (_, report) = picard_solve(&pb, &grid, &cfg).unwrap();
        let mut geometric = true;
        for s in &report.subintervals {
            geometric &= s.contraction_ratio < 0.55;
            geometric &= s.contraction_ratio <= s.theoretical_bound * (1.0 + GRID_ALLOWANCE);
            for w in s.differences.windows(2) {
                if w[0] > 1e-3 * cfg.tol {
                    geometric &= w[1] <= s.contraction_ratio * w[0] * (1.0 + 1e-12);
                }
            }
        }
        let ok = scan.max_ratio() < 0.55 && geometric;
        passed &= ok;
        parts.push(format!(
            "{form:?}: T_loc {:.4}, 50-pair max ratio {:.4} (< 0.55), iterate kappa max {:.4} over {} windows",
            scan.t_len,
            scan.max_ratio(),
            report.contraction_ratios().iter().copied().fold(0.0, f64::max),
            report.subintervals.len()
        ));
    }
    outcome(passed, parts.join("; "))
}

fn linear_case(drift: f64, reaction: f64, n_x: usize, n_t: usize) -> (f64, f64) {
    let horizon = 0.5;
    let pb = HeatProblem::new(
        gaussians(&[(1.0, 0.0, 1.0)]),
        drift,
        reaction,
        Nonlinearity::zero(),
        EquationForm::Source,
        1.0,
        2.0,
        horizon,
    )
    .unwrap();
    let grid = Grid::new(-15.0, 15.0, n_x, horizon, n_t, 1e-10).unwrap();
    let (u, _) = picard_solve(&pb, &grid, &PicardConfig::default()).unwrap();
    let err = (0..grid.n_t())
        .map(|n| trust_max(&grid, u.slice(n), &exact_drift_reaction(&pb, &grid.xs(), grid.t(n)).unwrap()))
        .fold(0.0, f64::max);
    (err, 5.0 * (grid.h() * grid.h() + grid.dt()))
}

/// 4. Drift-only, reaction-only and combined linear problems against the
/// closed-form solution, plus the effect of halving h.
fn exact_solution_equivalence() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, drift, reaction) in [("drift", 1.0, 0.0), ("reaction", 0.0, 1.0), ("both", 1.0, 1.0)] {
        let (coarse, bound) = linear_case(drift, reaction, 121, 101);
        let (fine, fine_bound) = linear_case(drift, reaction, 241, 101);
        // the spatial error of Gaussian sampling is far below h²; once it
        // reaches the time-discretization floor it cannot drop further
        let drop = coarse / fine;
        let ok = coarse <= bound && fine <= fine_bound && (drop >= 3.0 || fine <= 1e-9);
        passed &= ok;
        parts.push(format!(
            "{name}: err {coarse:.2e} -> {fine:.2e} (bound {bound:.2e}, h-halving drop {drop:.1}x)"
        ));
    }
    outcome(passed, parts.join("; "))
}

/// 5. Linear Black-Scholes call through the heat reduction.
fn black_scholes_round_trip() -> Outcome {
    let started = Instant::now();
    let model = ModelSpec::classical(0.2, 0.05, 1.0).unwrap();
    let payoff = Payoff::Call { strike: 100.0 };
    let pb = reduce_to_heat(&model, &payoff, Nonlinearity::zero(), 2.0).unwrap();
    let (x0, t0) = to_heat_coords(100.0, 0.0, &model).unwrap();
    let grid = Grid::new(x0 - 3.0, x0 + 3.0, 2048, t0, 201, 1e-10).unwrap();
    let (u, _) = picard_solve(&pb, &grid, &PicardConfig::default()).unwrap();
    let price = u.interpolate(x0, grid.n_t() - 1).unwrap();
    let (s_back, tau_back) = from_heat_coords(x0, t0, &model).unwrap();
    let reference = bs_closed_form(&model, &payoff, s_back, tau_back).unwrap();
    let rel = (price - reference).abs() / reference;
    let in_trust = grid.trust_interior().contains(&(((x0 - grid.x_min()) / grid.h()).round() as usize));
    let secs = started.elapsed().as_secs_f64();
    outcome(
        rel < 1e-3 && in_trust && (reference - 10.4506).abs() < 1e-4 && secs < 60.0,
        format!("price {price:.6} vs closed form {reference:.6}, rel err {rel:.2e} (< 1e-3), n_x 2048 in {secs:.1}s"),
    )
}

fn cross_validation_error(form: EquationForm, n_x: usize, n_t: usize) -> (f64, f64) {
    let horizon = 0.5;
    let data = gaussians(&[(0.5, 0.0, 0.5)]);
    let pb = match form {
        EquationForm::Source => HeatProblem::source_form(data, Nonlinearity::sat_sin(1.0).unwrap(), 2.0, horizon),
        EquationForm::Flux => {
            HeatProblem::flux_form(data, Nonlinearity::clamped_power(2.0, 2.0).unwrap(), 2.0, horizon)
        }
    }
    .unwrap();
    let grid = Grid::new(-12.0, 12.0, n_x, horizon, n_t, 1e-10).unwrap();
    let (u, _) = picard_solve(&pb, &grid, &PicardConfig::default()).unwrap();
    let fd = fd_solve(
        &pb,
        &FdConfig {
            startup_steps: 0,
            ..FdConfig::matching(&grid)
        },
    )
    .unwrap();
    let err = (0..grid.n_t())
        .map(|n| trust_max(&grid, u.slice(n), fd.slice(n)))
        .fold(0.0, f64::max);
    (err, 10.0 * (grid.h() * grid.h() + grid.dt() * grid.dt()))
}

/// 6. Nonlinear solves against the finite-difference oracle.
fn oracle_cross_validation() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for form in [EquationForm::Source, EquationForm::Flux] {
        let (coarse, bound_c) = cross_validation_error(form, 241, 101);
        let (fine, bound_f) = cross_validation_error(form, 481, 201);
        let ok = coarse <= bound_c && fine <= bound_f && fine < coarse;
        passed &= ok;
        parts.push(format!(
            "{form:?}: {coarse:.2e} (bound {bound_c:.2e}) -> {fine:.2e} (bound {bound_f:.2e})"
        ));
    }
    outcome(passed, parts.join("; "))
}

/// 7. Data-to-solution Lipschitz bound on 20 random pairs.
fn solution_map_bound() -> Outcome {
    let horizon = 0.3;
    let grid = Grid::new(-12.0, 12.0, 384, horizon, 61, 1e-10).unwrap();
    let cfg = PicardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for k in 0..20 {
        let mut draw = || {
            gaussians(&[
                (rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.2..1.0)),
                (rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.2..1.0)),
            ])
        };
        let (f, g) = (draw(), draw());
        let nl = Nonlinearity::sat_sin(1.0).unwrap();
        let pb = if k % 2 == 0 {
            HeatProblem::source_form(f.clone(), nl, 2.0, horizon)
        } else {
            HeatProblem::flux_form(f.clone(), nl, 2.0, horizon)
        }
        .unwrap();
        let check = solution_map_lipschitz(&pb, &grid, &cfg, &f.sample(&grid).unwrap(), &g.sample(&grid).unwrap())
            .unwrap();
        passed &= check.holds();
        worst = worst.max(check.ratio / check.bound);
    }
    outcome(passed, format!("20 pairs, worst ratio/((1-kappa)^-1 * 1.05) = {worst:.4} (<= 1)"))
}

/// 8. Degenerate inputs.
fn degenerate_inputs() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let grid = Grid::new(-10.0, 10.0, 256, 0.2, 21, 1e-10).unwrap();
    for form in [EquationForm::Source, EquationForm::Flux] {
        let nl = Nonlinearity::clamped_power(4.0 / 3.0, 8.0).unwrap();
        let pb = match form {
            EquationForm::Source => HeatProblem::source_form(InitialData::Zero, nl, 2.0, 0.2),
            EquationForm::Flux => HeatProblem::flux_form(InitialData::Zero, nl, 2.0, 0.2),
        }
        .unwrap();
        let (u, _) = picard_solve(&pb, &grid, &PicardConfig::default()).unwrap();
        checks.push(("zero data -> zero field", u.values().iter().all(|v| v.to_bits() == 0)));
    }
    let kernel_zero = [0.0, -1e-300, -1.0].iter().all(|&t| {
        [-1.0, 0.0, 2.0].iter().all(|&x| {
            heat_kernel(KernelQuery::new(x, t)) == 0.0 && heat_kernel_dx(KernelQuery::new(x, t)) == 0.0
        })
    });
    checks.push(("t <= 0 kernel queries -> 0", kernel_zero));
    let a_zero = "[model]\nsigma = 0.2\nr = 0.05\nmaturity = 1.0\na = 0.0\n[payoff]\nkind = \"call\"\nstrike = 100.0\n";
    checks.push((
        "A = 0 rejected at parse",
        matches!(parse_config(a_zero), Err(Error::Config(m)) if m.iter().any(|s| s.contains("A ≠ 0"))),
    ));
    let model = ModelSpec::classical(0.2, 0.05, 1.0).unwrap();
    let p_cfg = "p = 0.5\n[model]\nsigma = 0.2\nr = 0.05\nmaturity = 1.0\n[payoff]\nkind = \"call\"\nstrike = 100.0\n";
    let slice = vec![1.0; grid.n_x()];
    let p_rejected = LpExponent::new(0.5).is_err()
        && kernel_lp_norm(0.5, 1.0).is_err()
        && kernel_dx_lp_norm(0.99, 1.0).is_err()
        && lp_norm(&slice, 0.5, &grid).is_err()
        && sup_t_lp_norm(&SpaceTimeField::zeros(&grid), 0.0).is_err()
        && HeatProblem::source_form(InitialData::Zero, Nonlinearity::zero(), 0.5, 0.2).is_err()
        && reduce_to_heat(&model, &Payoff::Call { strike: 100.0 }, Nonlinearity::zero(), 0.5).is_err()
        && kernel_norm_by_quadrature(0.5, 1.0, false).is_err()
        && matches!(parse_config(p_cfg), Err(Error::Config(m)) if m.iter().any(|s| s.contains("p must be >= 1")));
    checks.push(("p < 1 rejected everywhere", p_rejected));
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("kernel norm identities", kernel_norm_identities),
        ("Duhamel estimates", duhamel_estimates),
        ("contraction certificate", contraction_certificate),
        ("exact-solution equivalence", exact_solution_equivalence),
        ("linear Black-Scholes round trip", black_scholes_round_trip),
        ("oracle cross-validation", oracle_cross_validation),
        ("solution-map Lipschitz bound", solution_map_bound),
        ("degenerate inputs", degenerate_inputs),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.passed {
            failures += 1;
        }
        println!(
            "acceptance {}: {} {name}: {}",
            i + 1,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
