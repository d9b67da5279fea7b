//! Reference solutions built from a different discretization family than
//! the kernel solver: closed-form prices, closed-form heat evolutions,
//! a theta-scheme finite-difference solver and Gauss-Legendre quadrature.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::field::{Grid, SpaceTimeField, DEFAULT_TAIL_EPSILON};
use crate::kernel::{heat_kernel, heat_kernel_dx, KernelQuery, LpExponent};
use crate::nonlinearity::Kind;
use crate::transform::{HeatProblem, InitialData, ModelSpec, Payoff};

fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes price at spot `s0` and time `tau`, for the classical model.
pub fn bs_closed_form(model: &ModelSpec, payoff: &Payoff, s0: f64, tau: f64) -> Result<f64> {
    model.validate()?;
    payoff.validate()?;
    if !model.is_classical() {
        return Err(Error::OracleUnsupported(
            "closed form needs A = σ²/2, B = r, C = -r, D = 0".into(),
        ));
    }
    if !(s0 > 0.0) || !s0.is_finite() {
        return Err(Error::Domain(format!("spot must be > 0, got {s0}")));
    }
    if !(0.0..=model.maturity).contains(&tau) {
        return Err(Error::Domain(format!("τ = {tau} outside [0, {}]", model.maturity)));
    }
    let remaining = model.maturity - tau;
    let (r, sigma) = (model.r, model.sigma);
    let call = |k: f64| -> f64 {
        if remaining == 0.0 {
            return (s0 - k).max(0.0);
        }
        let vol = sigma * remaining.sqrt();
        let d1 = ((s0 / k).ln() + (r + 0.5 * sigma * sigma) * remaining) / vol;
        let d2 = d1 - vol;
        s0 * norm_cdf(d1) - k * (-r * remaining).exp() * norm_cdf(d2)
    };
    let put = |k: f64| -> f64 {
        if remaining == 0.0 {
            return (k - s0).max(0.0);
        }
        let vol = sigma * remaining.sqrt();
        let d1 = ((s0 / k).ln() + (r + 0.5 * sigma * sigma) * remaining) / vol;
        let d2 = d1 - vol;
        k * (-r * remaining).exp() * norm_cdf(-d2) - s0 * norm_cdf(-d1)
    };
    match payoff {
        Payoff::Call { strike } => Ok(call(*strike)),
        Payoff::Put { strike } => Ok(put(*strike)),
        Payoff::CallSpread { lower, upper } => Ok(call(*lower) - call(*upper)),
        Payoff::Custom { .. } => Err(Error::OracleUnsupported("custom payoffs have no closed form".into())),
    }
}

/// Exact solution at time `t` of a problem whose right-hand side is linear
/// in `u` with Gaussian-mixture data:
/// `u(x, t) = e^{γt} Σ w Φ(x + βt - c, t₀ + t)`.
pub fn exact_drift_reaction(problem: &HeatProblem, xs: &[f64], t: f64) -> Result<Vec<f64>> {
    problem.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be >= 0, got {t}")));
    }
    let slope = match problem.nonlinearity.kind() {
        Kind::Zero => 0.0,
        Kind::Linear { slope } => *slope,
        other => {
            return Err(Error::OracleUnsupported(format!(
                "no closed form for nonlinearity {other:?}"
            )))
        }
    };
    let beta = problem.drift + problem.flux_coeff() * slope;
    let gamma = problem.reaction + problem.source_coeff() * slope;
    let bumps = match &problem.initial {
        InitialData::Zero => return Ok(vec![0.0; xs.len()]),
        InitialData::Gaussians(b) => b,
        InitialData::Payoff(_) => {
            return Err(Error::OracleUnsupported(
                "closed-form evolution needs Gaussian-mixture data".into(),
            ))
        }
    };
    let growth = (gamma * t).exp();
    Ok(xs
        .iter()
        .map(|&x| {
            growth
                * bumps
                    .iter()
                    .map(|b| b.weight * heat_kernel(KernelQuery::new(x + beta * t - b.center, b.time + t)))
                    .sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// 0 explicit, 0.5 Crank-Nicolson, 1 implicit Euler.
    pub theta: f64,
    /// Leading steps replaced by two implicit half steps each.
    pub startup_steps: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl FdConfig {
    /// Crank-Nicolson on the same window and resolution as `grid`.
    pub fn matching(grid: &Grid) -> Self {
        Self {
            x_min: grid.x_min(),
            x_max: grid.x_max(),
            n_x: grid.n_x(),
            n_t: grid.n_t(),
            theta: 0.5,
            startup_steps: 2,
            inner_tol: 1e-13,
            inner_max_iter: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Domain(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if self.n_x < 3 || self.n_t < 2 {
            return Err(Error::InvalidGrid(format!(
                "finite differences need n_x >= 3 and n_t >= 2, got {} and {}",
                self.n_x, self.n_t
            )));
        }
        if !(self.x_max > self.x_min) {
            return Err(Error::InvalidGrid("x_max must exceed x_min".into()));
        }
        if !(self.inner_tol > 0.0) || self.inner_max_iter == 0 {
            return Err(Error::Domain("inner iteration needs tol > 0 and at least one pass".into()));
        }
        Ok(())
    }
}

/// In-place Thomas algorithm; `sub[0]` and `sup[n-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / m;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

struct FdStepper<'a> {
    problem: &'a HeatProblem,
    h: f64,
    src: f64,
    flux: f64,
    nonlinear: bool,
}

impl FdStepper<'_> {
    fn linear(&self, u: &[f64], j: usize) -> f64 {
        let (h, pb) = (self.h, self.problem);
        (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (h * h) + pb.drift * (u[j + 1] - u[j - 1]) / (2.0 * h) + pb.reaction * u[j]
    }

    fn nonlinear_term(&self, fu: &[f64], j: usize) -> f64 {
        self.src * fu[j] + self.flux * (fu[j + 1] - fu[j - 1]) / (2.0 * self.h)
    }

    /// One theta step of size `dt` from `u` with boundary values held fixed.
    fn step(&self, u: &[f64], dt: f64, theta: f64, cfg: &FdConfig, step: usize) -> Result<Vec<f64>> {
        let n = u.len();
        let m = n - 2;
        let (h, pb) = (self.h, self.problem);
        let lo = -theta * dt * (1.0 / (h * h) - pb.drift / (2.0 * h));
        let up = -theta * dt * (1.0 / (h * h) + pb.drift / (2.0 * h));
        let di = 1.0 - theta * dt * (-2.0 / (h * h) + pb.reaction);
        let eval = |v: &[f64]| -> Vec<f64> { v.iter().map(|&x| pb.nonlinearity.eval(x)).collect() };
        let fu_old = if self.nonlinear { eval(u) } else { Vec::new() };
        let explicit: Vec<f64> = (1..n - 1)
            .map(|j| {
                let mut r = u[j] + (1.0 - theta) * dt * self.linear(u, j);
                if self.nonlinear {
                    r += (1.0 - theta) * dt * self.nonlinear_term(&fu_old, j);
                }
                r
            })
            .collect();
        let sub = vec![lo; m];
        let sup = vec![up; m];
        let diag = vec![di; m];
        let mut next = u.to_vec();
        for _ in 0..cfg.inner_max_iter {
            let mut rhs = explicit.clone();
            if self.nonlinear {
                let fu_new = eval(&next);
                for (k, r) in rhs.iter_mut().enumerate() {
                    *r += theta * dt * self.nonlinear_term(&fu_new, k + 1);
                }
            }
            rhs[0] -= lo * u[0];
            rhs[m - 1] -= up * u[n - 1];
            solve_tridiagonal(&sub, &diag, &sup, &mut rhs);
            let change = rhs
                .iter()
                .zip(&next[1..n - 1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = 1.0 + rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
            next[1..n - 1].copy_from_slice(&rhs);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("finite-difference step {step}")));
            }
            if !self.nonlinear || change <= cfg.inner_tol * scale {
                return Ok(next);
            }
        }
        Err(Error::FdInnerNonConvergence { step })
    }
}

/// Theta-scheme solution with central differences and Dirichlet values held
/// at the data's edge values; `F` is lagged and inner-iterated each step.
pub fn fd_solve(problem: &HeatProblem, cfg: &FdConfig) -> Result<SpaceTimeField> {
    problem.validate()?;
    cfg.validate()?;
    let grid = Grid::new(cfg.x_min, cfg.x_max, cfg.n_x, problem.horizon, cfg.n_t, DEFAULT_TAIL_EPSILON)?;
    let f = problem.initial.sample(&grid)?;
    let stepper = FdStepper {
        problem,
        h: grid.h(),
        src: problem.source_coeff(),
        flux: problem.flux_coeff(),
        nonlinear: problem.source_coeff() != 0.0 || problem.flux_coeff() != 0.0,
    };
    let dt = grid.dt();
    let mut slices = Vec::with_capacity(cfg.n_t);
    slices.push(f);
    for step in 1..cfg.n_t {
        let prev = &slices[step - 1];
        let next = if step <= cfg.startup_steps && cfg.theta < 1.0 {
            let half = stepper.step(prev, 0.5 * dt, 1.0, cfg, step)?;
            stepper.step(&half, 0.5 * dt, 1.0, cfg, step)?
        } else {
            stepper.step(prev, dt, cfg.theta, cfg, step)?
        };
        slices.push(next);
    }
    SpaceTimeField::from_slices(&grid, &slices)
}

/// 16-point Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton's
/// method on the Legendre recurrence.
fn gauss_legendre_16() -> [(f64, f64); 16] {
    const N: usize = 16;
    let mut out = [(0.0, 0.0); N];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=N {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        *slot = (x, 2.0 / ((1.0 - x * x) * dp * dp));
    }
    out
}

/// Composite 16-point Gauss-Legendre rule over `panels` equal panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre_16();
    let w = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * w;
            rule.iter().map(|(x, wt)| wt * f(mid + 0.5 * w * x)).sum::<f64>() * 0.5 * w
        })
        .sum()
}

/// `‖Φ(·,t)‖_p` or `‖Φ_x(·,t)‖_p` by quadrature over the half-line
/// (both integrands are even in `x`).
pub fn kernel_norm_by_quadrature(p: f64, t: f64, derivative: bool) -> Result<f64> {
    let p = LpExponent::new(p)?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be > 0, got {t}")));
    }
    let k = move |x: f64| {
        let q = KernelQuery::new(x, t);
        if derivative {
            heat_kernel_dx(q).abs()
        } else {
            heat_kernel(q)
        }
    };
    if p.is_infinite() {
        // both maxima are attained at x = 0 and x = √(2t) respectively
        return Ok(k(if derivative { (2.0 * t).sqrt() } else { 0.0 }));
    }
    let pv = p.value();
    let reach = (800.0 * t / pv).sqrt();
    let half = integrate(|x| k(x).powf(pv), 0.0, reach, 400);
    Ok((2.0 * half).powf(1.0 / pv))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn power_law_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Linear nonlinearities fold into drift or reaction; used to decide which
/// problems [`exact_drift_reaction`] covers.
pub fn has_closed_form(problem: &HeatProblem) -> bool {
    matches!(problem.nonlinearity.kind(), Kind::Zero | Kind::Linear { .. })
        && matches!(problem.initial, InitialData::Zero | InitialData::Gaussians(_))
}
