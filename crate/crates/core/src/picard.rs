//! The Duhamel map `Ψ(u) = Φ(t) ∗ f + ∫_0^t Φ(t-s) ∗ G(u)(s) ds` and its
//! fixed point by Picard iteration on windows short enough for `Ψ` to be a
//! contraction in `L^∞_t L^p_x`.
//!
//! `G` splits into a part under the plain kernel (`reaction·u + src·F(u)`)
//! and a part under `Φ_x` (`drift·u + flux·F(u)`), so with `L` the Lipschitz
//! constant of `F` the contraction factor on a window of length `T` is at most
//!
//! ```text
//! c_dx (|drift| + |flux| L) √T  +  c_plain (|reaction| + |src| L) T
//! ```
//!
//! where `c_plain`, `c_dx` are the discrete Young constants of the operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{
    lp_norm_with_step, sup_lp, sup_lp_distance, Convolver, DuhamelOperator, Grid, HeatPropagator, SpaceTimeField,
    YoungConstants,
};
use crate::kernel::LpExponent;
use crate::transform::{EquationForm, HeatProblem};

/// Norms above this are treated as blow-up.
const NORM_OVERFLOW: f64 = 1e150;
/// Steps used to estimate the Young constants before the window is known.
const CALIBRATION_STEPS: usize = 64;
/// Relative floor on iterate differences set by floating-point roundoff.
const ROUNDOFF_FLOOR: f64 = 1e-12;
/// Slack on measured ratios for discretization error.
pub const GRID_ALLOWANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub safety: f64,
    /// Overrides both calibrated Young constants when set.
    pub c_env: Option<f64>,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            safety: 0.5,
            c_env: None,
        }
    }
}

impl PicardConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            out.push(format!("tol must be > 0, got {}", self.tol));
        }
        if self.max_iter < 2 {
            out.push(format!("max_iter must be >= 2, got {}", self.max_iter));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            out.push(format!("safety must lie in (0, 1), got {}", self.safety));
        }
        if let Some(c) = self.c_env {
            if !(c > 0.0 && c.is_finite()) {
                out.push(format!("c_env must be finite and > 0, got {c}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(m) => Err(Error::Domain(m)),
            None => Ok(()),
        }
    }
}

/// `sqrt_coeff·√T + linear_coeff·T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Envelope {
    pub sqrt_coeff: f64,
    pub linear_coeff: f64,
}

impl Envelope {
    pub fn for_problem(problem: &HeatProblem, young: YoungConstants) -> Self {
        let l = problem.nonlinearity.certified_lipschitz();
        Self {
            sqrt_coeff: young.derivative * (problem.drift.abs() + problem.flux_coeff().abs() * l),
            linear_coeff: young.plain * (problem.reaction.abs() + problem.source_coeff().abs() * l),
        }
    }

    pub fn bound(&self, t: f64) -> f64 {
        self.sqrt_coeff * t.sqrt() + self.linear_coeff * t
    }

    /// Largest `T <= cap` with `bound(T) <= safety`.
    pub fn local_horizon(&self, safety: f64, cap: f64) -> f64 {
        let (a, b) = (self.sqrt_coeff, self.linear_coeff);
        let denom = a + (a * a + 4.0 * b * safety).sqrt();
        if denom == 0.0 {
            return cap;
        }
        let s = 2.0 * safety / denom;
        (s * s).min(cap)
    }
}

/// Young constants of the continuum kernels: `‖Φ‖_1 = 1`,
/// `∫_0^T ‖Φ_x(s)‖_1 ds = (2/√π)√T`.
pub fn continuum_young_constants() -> YoungConstants {
    YoungConstants {
        plain: 1.0,
        derivative: 2.0 / std::f64::consts::PI.sqrt(),
    }
}

/// Local horizon for the two unit-coefficient equation shapes: source form
/// `u_x + F₁(u)` has envelope `C(√T + L T)`, flux form `u + (F₂(u))_x` has
/// `C(T + L √T)`.
pub fn choose_local_horizon(l: f64, form: EquationForm, cfg: &PicardConfig, cap: f64) -> Result<f64> {
    cfg.validate()?;
    if !(l >= 0.0 && l.is_finite()) {
        return Err(Error::Domain(format!("Lipschitz constant must be finite and >= 0, got {l}")));
    }
    if !(cap > 0.0) {
        return Err(Error::Domain(format!("horizon cap must be > 0, got {cap}")));
    }
    let young = match cfg.c_env {
        Some(c) => YoungConstants { plain: c, derivative: c },
        None => continuum_young_constants(),
    };
    let env = match form {
        EquationForm::Source => Envelope {
            sqrt_coeff: young.derivative,
            linear_coeff: young.plain * l,
        },
        EquationForm::Flux => Envelope {
            sqrt_coeff: young.derivative * l,
            linear_coeff: young.plain,
        },
    };
    Ok(env.local_horizon(cfg.safety, cap))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubintervalReport {
    pub t_start: f64,
    pub t_len: f64,
    pub steps: usize,
    pub iterations: usize,
    /// Largest `‖Ψu^k - Ψu^{k-1}‖ / ‖u^k - u^{k-1}‖` over the iterates.
    pub contraction_ratio: f64,
    pub theoretical_bound: f64,
    /// `‖u^{k+1} - u^k‖` for every iteration.
    pub differences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub p: f64,
    pub tol: f64,
    pub lipschitz: f64,
    pub young_constants: YoungConstants,
    pub envelope: Envelope,
    pub local_horizon: f64,
    pub subintervals: Vec<SubintervalReport>,
    pub final_residual: f64,
    pub clamp_activated: bool,
    pub norms_timeline: Vec<f64>,
}

impl SolveReport {
    pub fn iterations_per_subinterval(&self) -> Vec<usize> {
        self.subintervals.iter().map(|s| s.iterations).collect()
    }

    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.subintervals.iter().map(|s| s.contraction_ratio).collect()
    }

    pub fn theoretical_bounds(&self) -> Vec<f64> {
        self.subintervals.iter().map(|s| s.theoretical_bound).collect()
    }

    /// Every measured ratio within the envelope plus the grid allowance.
    pub fn certificate_holds(&self) -> bool {
        self.subintervals
            .iter()
            .all(|s| s.contraction_ratio <= s.theoretical_bound * (1.0 + GRID_ALLOWANCE) + 1e-12)
    }
}

struct WindowOutcome {
    slices: Vec<Vec<f64>>,
    iterations: usize,
    differences: Vec<f64>,
    ratio: f64,
}

type Sources = (Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>);

/// Operators for one window length, shared by every subinterval.
struct LocalSolver<'a> {
    problem: &'a HeatProblem,
    cfg: &'a PicardConfig,
    heat: HeatPropagator,
    duhamel: DuhamelOperator,
    young: YoungConstants,
    envelope: Envelope,
    local_horizon: f64,
    p: LpExponent,
    h: f64,
}

impl<'a> LocalSolver<'a> {
    fn new(problem: &'a HeatProblem, grid: &Grid, cfg: &'a PicardConfig, forced_steps: Option<usize>) -> Result<Self> {
        cfg.validate()?;
        problem.validate()?;
        let rel = (grid.t_horizon() - problem.horizon).abs() / problem.horizon;
        if rel > 1e-9 {
            return Err(Error::Domain(format!(
                "grid horizon {} does not match the problem horizon {}",
                grid.t_horizon(),
                problem.horizon
            )));
        }
        let total = grid.n_t() - 1;
        if total == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        let conv = Convolver::for_grid(grid);
        let dt = grid.dt();
        let fixed = cfg.c_env.map(|c| YoungConstants { plain: c, derivative: c });

        let (steps, local_horizon, duhamel) = match forced_steps {
            Some(s) => {
                let s = s.clamp(1, total);
                let op = DuhamelOperator::with_convolver(conv.clone(), dt, s)?;
                (s, s as f64 * dt, op)
            }
            None => {
                let mut young = match fixed {
                    Some(y) => y,
                    None => DuhamelOperator::with_convolver(conv.clone(), dt, total.min(CALIBRATION_STEPS))?
                        .young_constants(),
                };
                let mut attempt = 0;
                loop {
                    let horizon = Envelope::for_problem(problem, young).local_horizon(cfg.safety, grid.t_horizon());
                    let steps = ((horizon / dt) * (1.0 + 1e-12)).floor() as usize;
                    if steps == 0 {
                        return Err(Error::HorizonBelowTimeStep { horizon, dt });
                    }
                    let steps = steps.min(total);
                    let op = DuhamelOperator::with_convolver(conv.clone(), dt, steps)?;
                    let exact = op.young_constants();
                    let within = Envelope::for_problem(problem, exact).bound(steps as f64 * dt)
                        <= cfg.safety * (1.0 + 1e-12);
                    attempt += 1;
                    if fixed.is_some() || within || attempt >= 8 {
                        break (steps, horizon, op);
                    }
                    young = YoungConstants {
                        plain: young.plain.max(exact.plain),
                        derivative: young.derivative.max(exact.derivative),
                    };
                }
            }
        };
        let young = fixed.unwrap_or_else(|| duhamel.young_constants());
        let heat = HeatPropagator::new(conv, dt, steps)?;
        Ok(Self {
            problem,
            cfg,
            heat,
            duhamel,
            young,
            envelope: Envelope::for_problem(problem, young),
            local_horizon,
            p: problem.p_norm,
            h: grid.h(),
        })
    }

    fn steps(&self) -> usize {
        self.duhamel.steps()
    }

    fn dt(&self) -> f64 {
        self.duhamel.dt()
    }

    /// Plain and derivative parts of `G(u)`; `None` when identically zero.
    fn sources(&self, u: &[Vec<f64>]) -> Sources {
        let pb = self.problem;
        let nl = &pb.nonlinearity;
        let build = |linear: f64, nonlinear: f64| -> Option<Vec<Vec<f64>>> {
            if linear == 0.0 && nonlinear == 0.0 {
                return None;
            }
            Some(
                u.iter()
                    .map(|s| s.iter().map(|&v| linear * v + nonlinear * nl.eval(v)).collect())
                    .collect(),
            )
        };
        (build(pb.reaction, pb.source_coeff()), build(pb.drift, pb.flux_coeff()))
    }

    fn duhamel_of(&self, (plain, deriv): &Sources, len: usize) -> Vec<Vec<f64>> {
        if plain.is_none() && deriv.is_none() {
            return vec![vec![0.0; self.duhamel.convolver().len()]; len];
        }
        self.duhamel.apply(plain.as_deref(), deriv.as_deref())
    }

    fn psi(&self, u: &[Vec<f64>], heat: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.duhamel_of(&self.sources(u), u.len());
        heat.iter()
            .zip(d)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect()
    }

    /// `‖Ψu - Ψv‖` computed as the Duhamel term of `G(u) - G(v)`.
    fn psi_difference_norm(&self, u: &[Vec<f64>], v: &[Vec<f64>]) -> f64 {
        let (pu, du) = self.sources(u);
        let (pv, dv) = self.sources(v);
        let sub = |a: Option<Vec<Vec<f64>>>, b: Option<Vec<Vec<f64>>>| {
            a.zip(b).map(|(a, b)| {
                a.into_iter()
                    .zip(b)
                    .map(|(x, y)| x.into_iter().zip(y).map(|(p, q)| p - q).collect())
                    .collect()
            })
        };
        let d = self.duhamel_of(&(sub(pu, pv), sub(du, dv)), u.len());
        sup_lp(d.iter().map(Vec::as_slice), self.p, self.h)
    }

    fn solve_window(&self, f: &[f64], steps: usize, t_start: f64) -> Result<WindowOutcome> {
        let pb = self.problem;
        let forced_at_zero = !pb.nonlinearity.vanishes_at_zero()
            && (pb.source_coeff() != 0.0 || pb.flux_coeff() != 0.0);
        if !forced_at_zero && f.iter().all(|&v| v == 0.0) {
            return Ok(WindowOutcome {
                slices: vec![vec![0.0; f.len()]; steps + 1],
                iterations: 0,
                differences: Vec::new(),
                ratio: 0.0,
            });
        }
        let heat = self.heat.evolve(f, steps);
        let mut u = heat.clone();
        let mut iterations = 1;
        let mut differences: Vec<f64> = Vec::new();
        let mut ratio: f64 = 0.0;
        loop {
            let w = self.psi(&u, &heat);
            iterations += 1;
            let d = sup_lp_distance(&w, &u, self.p, self.h);
            let scale = sup_lp(w.iter().map(Vec::as_slice), self.p, self.h);
            if !d.is_finite() || !scale.is_finite() || scale > NORM_OVERFLOW {
                return Err(Error::NormOverflow { t: t_start });
            }
            let floor = ROUNDOFF_FLOOR * scale;
            if let Some(&prev) = differences.last() {
                if prev > (1e-3 * self.cfg.tol).max(floor) {
                    ratio = ratio.max(d / prev);
                }
            }
            differences.push(d);
            u = w;
            if d <= self.cfg.tol.max(floor) {
                break;
            }
            if iterations >= self.cfg.max_iter {
                return Err(Error::NonConvergence {
                    iterations,
                    last_difference: d,
                    ratio,
                });
            }
        }
        Ok(WindowOutcome {
            slices: u,
            iterations,
            differences,
            ratio,
        })
    }
}

/// One application of `Ψ` over the whole grid, with `f` the problem's data.
pub fn apply_psi(u: &SpaceTimeField, problem: &HeatProblem) -> Result<SpaceTimeField> {
    u.validate()?;
    let grid = u.grid();
    let cfg = PicardConfig::default();
    let solver = LocalSolver::new(problem, grid, &cfg, Some(grid.n_t() - 1))?;
    let f = problem.initial.sample(grid)?;
    let heat = solver.heat.evolve(&f, grid.n_t() - 1);
    let slices: Vec<Vec<f64>> = u.slices().map(<[f64]>::to_vec).collect();
    SpaceTimeField::from_slices(grid, &solver.psi(&slices, &heat))
}

/// Fixed point of `Ψ` over the grid's horizon, restarting from the terminal
/// slice of each contraction window.
pub fn picard_solve(problem: &HeatProblem, grid: &Grid, cfg: &PicardConfig) -> Result<(SpaceTimeField, SolveReport)> {
    let f = problem.initial.sample(grid)?;
    solve_from(problem, grid, cfg, &f)
}

fn solve_from(problem: &HeatProblem, grid: &Grid, cfg: &PicardConfig, f: &[f64]) -> Result<(SpaceTimeField, SolveReport)> {
    let solver = LocalSolver::new(problem, grid, cfg, None)?;
    let total = grid.n_t() - 1;
    let window = solver.steps();
    let mut field = SpaceTimeField::zeros(grid);
    field.slice_mut(0).copy_from_slice(f);
    let mut subintervals = Vec::new();
    let mut start = 0;
    while start < total {
        let steps = window.min(total - start);
        let t_start = grid.t(start);
        let init = field.slice(start).to_vec();
        let out = solver.solve_window(&init, steps, t_start)?;
        for (k, s) in out.slices.iter().enumerate().skip(1) {
            field.slice_mut(start + k).copy_from_slice(s);
        }
        let t_len = steps as f64 * solver.dt();
        subintervals.push(SubintervalReport {
            t_start,
            t_len,
            steps,
            iterations: out.iterations,
            contraction_ratio: out.ratio,
            theoretical_bound: solver.envelope.bound(t_len),
            differences: out.differences,
        });
        start += steps;
    }
    let p = problem.p_norm;
    let norms_timeline: Vec<f64> = field.slices().map(|s| lp_norm_with_step(s, p, grid.h())).collect();
    if let Some(n) = norms_timeline.iter().position(|v| !v.is_finite() || *v > NORM_OVERFLOW) {
        return Err(Error::NormOverflow { t: grid.t(n) });
    }
    field.validate()?;
    let clamp_activated = problem
        .nonlinearity
        .clamp_radius()
        .is_some_and(|r| field.values().iter().any(|v| v.abs() > r));
    let final_residual = subintervals
        .iter()
        .filter_map(|s| s.differences.last().copied())
        .fold(0.0, f64::max);
    let report = SolveReport {
        p: p.value(),
        tol: cfg.tol,
        lipschitz: problem.nonlinearity.certified_lipschitz(),
        young_constants: solver.young,
        envelope: solver.envelope,
        local_horizon: solver.local_horizon,
        subintervals,
        final_residual,
        clamp_activated,
        norms_timeline,
    };
    Ok((field, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionScan {
    pub t_len: f64,
    pub steps: usize,
    pub theoretical_bound: f64,
    pub ratios: Vec<f64>,
}

impl ContractionScan {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// `‖Ψu - Ψv‖ / ‖u - v‖` over random smooth pairs on the local window
/// chosen by the solver.
pub fn measure_contraction(
    problem: &HeatProblem,
    grid: &Grid,
    cfg: &PicardConfig,
    trials: usize,
    seed: u64,
) -> Result<ContractionScan> {
    scan(problem, grid, cfg, None, trials, seed)
}

/// As [`measure_contraction`] on a window of exactly `steps` time steps.
pub fn measure_contraction_over(
    problem: &HeatProblem,
    grid: &Grid,
    cfg: &PicardConfig,
    steps: usize,
    trials: usize,
    seed: u64,
) -> Result<ContractionScan> {
    if steps == 0 {
        return Err(Error::Domain("contraction window needs at least one step".into()));
    }
    scan(problem, grid, cfg, Some(steps), trials, seed)
}

fn scan(
    problem: &HeatProblem,
    grid: &Grid,
    cfg: &PicardConfig,
    steps: Option<usize>,
    trials: usize,
    seed: u64,
) -> Result<ContractionScan> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    let solver = LocalSolver::new(problem, grid, cfg, steps)?;
    let steps = solver.steps();
    let t_len = steps as f64 * solver.dt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(trials);
    while ratios.len() < trials {
        let u = random_field(&mut rng, grid, steps, t_len);
        let delta = random_field(&mut rng, grid, steps, t_len);
        let eps = 10f64.powf(rng.gen_range(-2.0..0.0));
        let v: Vec<Vec<f64>> = u
            .iter()
            .zip(&delta)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + eps * y).collect())
            .collect();
        let dist = sup_lp_distance(&u, &v, solver.p, solver.h);
        if dist < 1e-3 * cfg.tol {
            continue;
        }
        ratios.push(solver.psi_difference_norm(&u, &v) / dist);
    }
    Ok(ContractionScan {
        t_len,
        steps,
        theoretical_bound: solver.envelope.bound(t_len),
        ratios,
    })
}

/// Sum of Gaussian bumps with random centres, widths and amplitudes, each
/// modulated in time by `1 + ½ cos(ωt + φ)`.
fn random_field(rng: &mut ChaCha8Rng, grid: &Grid, steps: usize, t_len: f64) -> Vec<Vec<f64>> {
    let width = grid.x_max() - grid.x_min();
    let lo = grid.x_min() + 0.25 * width;
    let w_min = (4.0 * grid.h()).ln();
    let w_max = (width / 8.0).max(8.0 * grid.h()).ln();
    let bumps: Vec<[f64; 5]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                lo + rng.gen_range(0.0..0.5) * width,
                rng.gen_range(w_min..w_max).exp(),
                rng.gen_range(0.0..4.0 * std::f64::consts::PI / t_len),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    (0..=steps)
        .map(|n| {
            let t = grid.t(n);
            grid.xs()
                .into_iter()
                .map(|x| {
                    bumps
                        .iter()
                        .map(|[a, c, w, om, ph]| {
                            let z = (x - c) / w;
                            a * (-0.5 * z * z).exp() * (1.0 + 0.5 * (om * t + ph).cos())
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzCheck {
    /// `‖u_f - u_g‖_{L^∞_t L^p_x} / ‖f - g‖_{L^p}` on the first window.
    pub ratio: f64,
    pub kappa: f64,
    /// `(1 - κ)^{-1}` with the grid allowance applied.
    pub bound: f64,
    pub t_len: f64,
}

impl LipschitzCheck {
    pub fn holds(&self) -> bool {
        self.ratio <= self.bound
    }
}

/// Lipschitz constant of the data-to-solution map over the first
/// contraction window.
pub fn solution_map_lipschitz(
    problem: &HeatProblem,
    grid: &Grid,
    cfg: &PicardConfig,
    f: &[f64],
    g: &[f64],
) -> Result<LipschitzCheck> {
    for d in [f, g] {
        if d.len() != grid.n_x() {
            return Err(Error::Domain(format!("data length {} does not match n_x = {}", d.len(), grid.n_x())));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial data".into()));
        }
    }
    let p = problem.p_norm;
    let diff: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
    let data_dist = lp_norm_with_step(&diff, p, grid.h());
    if data_dist < 1e-3 * cfg.tol {
        return Err(Error::Domain("f and g coincide on the grid".into()));
    }
    let solver = LocalSolver::new(problem, grid, cfg, None)?;
    let steps = solver.steps();
    let uf = solver.solve_window(f, steps, 0.0)?;
    let ug = solver.solve_window(g, steps, 0.0)?;
    let sol_dist = sup_lp_distance(&uf.slices, &ug.slices, p, grid.h());
    let mut kappa = uf.ratio.max(ug.ratio);
    if sol_dist > 1e-3 * cfg.tol {
        kappa = kappa.max(solver.psi_difference_norm(&uf.slices, &ug.slices) / sol_dist);
    }
    let bound = if kappa < 1.0 {
        (1.0 + GRID_ALLOWANCE) / (1.0 - kappa)
    } else {
        f64::INFINITY
    };
    Ok(LipschitzCheck {
        ratio: sol_dist / data_dist,
        kappa,
        bound,
        t_len: steps as f64 * solver.dt(),
    })
}
