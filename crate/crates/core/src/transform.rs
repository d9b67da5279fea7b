//! Black-Scholes coordinates `(S, τ)` to heat coordinates `(x, t)` and the
//! reduction of the generalized equation
//!
//! ```text
//! u_τ + A S² u_SS + B S u_S + C u = D·F(u)          (source form)
//! u_τ + A S² u_SS + B S u_S + C u = D·S (F(u))_S    (flux form)
//! ```
//!
//! to `u_t - u_xx = β u_x + γ u + δ·F(u)` (resp. `δ·(F(u))_x`) through
//! `x = ln S`, `t = A (T - τ)`, which gives `β = B/A - 1`, `γ = C/A`,
//! `δ = -D/A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Grid;
use crate::kernel::{heat_kernel, KernelQuery, LpExponent};
use crate::nonlinearity::Nonlinearity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquationForm {
    /// Lipschitz source `F₁(u)`, heat form `u_t - u_xx = u_x + F₁(u)`.
    Source,
    /// Flux term `S (F₂(u))_S`, heat form `u_t - u_xx = u + (F₂(u))_x`.
    Flux,
}

/// Where the nonlinearity enters the heat-form right-hand side.
pub type Placement = EquationForm;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub sigma: f64,
    pub r: f64,
    pub maturity: f64,
    pub form: EquationForm,
}

impl ModelSpec {
    /// Linear Black-Scholes: `A = σ²/2`, `B = r`, `C = -r`, `D = 0`.
    pub fn classical(sigma: f64, r: f64, maturity: f64) -> Result<Self> {
        let m = Self {
            a: 0.5 * sigma * sigma,
            b: r,
            c: -r,
            d: 0.0,
            sigma,
            r,
            maturity,
            form: EquationForm::Source,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.violations().into_iter().next().map_or(Ok(()), Err)
    }

    /// Every invariant violation, not just the first.
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        for (name, v) in [("A", self.a), ("B", self.b), ("C", self.c), ("D", self.d), ("r", self.r)] {
            if !v.is_finite() {
                out.push(Error::InvalidModel(format!("{name} must be finite, got {v}")));
            }
        }
        if self.a == 0.0 {
            out.push(Error::ReductionImpossible(
                "A = 0: the change of variables t = A(T - τ) needs A ≠ 0".into(),
            ));
        } else if self.a < 0.0 {
            out.push(Error::ReductionImpossible(format!(
                "A = {} < 0 turns the final-value problem into a backward heat equation",
                self.a
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            out.push(Error::InvalidModel(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.maturity > 0.0) || !self.maturity.is_finite() {
            out.push(Error::InvalidModel(format!("maturity must be > 0, got {}", self.maturity)));
        }
        out
    }

    pub fn is_classical(&self) -> bool {
        let tol = 1e-12 * (1.0 + self.a.abs() + self.r.abs());
        (self.a - 0.5 * self.sigma * self.sigma).abs() <= tol
            && (self.b - self.r).abs() <= tol
            && (self.c + self.r).abs() <= tol
            && self.d == 0.0
    }

    pub fn heat_horizon(&self) -> f64 {
        self.a * self.maturity
    }
}

pub fn to_heat_coords(s: f64, tau: f64, model: &ModelSpec) -> Result<(f64, f64)> {
    model.validate()?;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("asset price must be > 0, got {s}")));
    }
    if !(0.0..=model.maturity).contains(&tau) {
        return Err(Error::Domain(format!("τ = {tau} outside [0, {}]", model.maturity)));
    }
    Ok((s.ln(), model.a * (model.maturity - tau)))
}

pub fn from_heat_coords(x: f64, t: f64, model: &ModelSpec) -> Result<(f64, f64)> {
    model.validate()?;
    let t_max = model.heat_horizon();
    if !(0.0..=t_max).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {t_max}]")));
    }
    if !x.is_finite() {
        return Err(Error::Domain(format!("x must be finite, got {x}")));
    }
    Ok((x.exp(), model.maturity - t / model.a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    CallSpread { lower: f64, upper: f64 },
    /// `(S, value)` pairs, linearly interpolated, flat outside the table.
    Custom { table: Vec<(f64, f64)> },
}

impl Payoff {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPayoff(m));
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } => {
                if !(*strike > 0.0) || !strike.is_finite() {
                    return bad(format!("strike must be > 0, got {strike}"));
                }
            }
            Payoff::CallSpread { lower, upper } => {
                if !(*lower > 0.0 && lower < upper && upper.is_finite()) {
                    return bad(format!("call spread needs 0 < lower < upper, got {lower}, {upper}"));
                }
            }
            Payoff::Custom { table } => {
                if table.len() < 2 {
                    return bad("custom payoff needs at least two points".into());
                }
                if table.iter().any(|(s, v)| !(s.is_finite() && v.is_finite())) {
                    return bad("custom payoff values must be finite".into());
                }
                if table[0].0 <= 0.0 {
                    return bad("custom payoff prices must be > 0".into());
                }
                if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("custom payoff prices must be strictly increasing".into());
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::CallSpread { lower, upper } => (s - lower).max(0.0) - (s - upper).max(0.0),
            Payoff::Custom { table } => {
                let (first, last) = (table[0], table[table.len() - 1]);
                if s <= first.0 {
                    first.1
                } else if s >= last.0 {
                    last.1
                } else {
                    let i = table.partition_point(|p| p.0 <= s) - 1;
                    let (a, b) = (table[i], table[i + 1]);
                    a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
                }
            }
        }
    }

    /// Prices where the payoff has a kink; all must lie inside the window.
    fn features(&self) -> Vec<f64> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } => vec![*strike],
            Payoff::CallSpread { lower, upper } => vec![*lower, *upper],
            Payoff::Custom { table } => vec![table[0].0, table[table.len() - 1].0],
        }
    }
}

/// `weight · Φ(x - center, time)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBump {
    pub weight: f64,
    pub center: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitialData {
    Zero,
    /// Payoff in log-price, `x ↦ payoff(e^x)`, zero outside the window.
    Payoff(Payoff),
    /// Sum of heat kernels; closed-form evolution under drift and reaction.
    Gaussians(Vec<GaussianBump>),
}

impl InitialData {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InitialData::Zero => 0.0,
            InitialData::Payoff(p) => p.eval(x.exp()),
            InitialData::Gaussians(bumps) => bumps
                .iter()
                .map(|b| b.weight * heat_kernel(KernelQuery::new(x - b.center, b.time)))
                .sum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialData::Zero => Ok(()),
            InitialData::Payoff(p) => p.validate(),
            InitialData::Gaussians(bumps) => {
                for b in bumps {
                    if !(b.weight.is_finite() && b.center.is_finite() && b.time > 0.0 && b.time.is_finite()) {
                        return Err(Error::Domain(format!("invalid Gaussian bump {b:?}")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Samples the data on the grid; the implicit zero extension outside the
    /// window is what makes payoffs like the call square-integrable.
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        self.validate()?;
        if let InitialData::Payoff(p) = self {
            for s in p.features() {
                let x = s.ln();
                if !(x > grid.x_min() && x < grid.x_max()) {
                    return Err(Error::Truncation(format!(
                        "payoff feature at S = {s} (x = {x:.4}) lies outside the window [{}, {}]",
                        grid.x_min(),
                        grid.x_max()
                    )));
                }
            }
        }
        let out: Vec<f64> = grid.xs().into_iter().map(|x| self.eval(x)).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Truncation("initial data is not finite on the window".into()));
        }
        Ok(out)
    }
}

/// Coefficients needed to map heat-form results back to `(S, τ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rescaling {
    pub model: ModelSpec,
    pub drift: f64,
    pub reaction: f64,
    pub nonlinear: f64,
}

/// `u_t - u_xx = drift·u_x + reaction·u + coeff·F(u)` (source placement) or
/// `... + coeff·(F(u))_x` (flux placement), `u(·,0) = f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatProblem {
    pub initial: InitialData,
    pub drift: f64,
    pub reaction: f64,
    pub nonlinearity: Nonlinearity,
    pub placement: Placement,
    pub nonlinear_coeff: f64,
    pub p_norm: LpExponent,
    pub horizon: f64,
    pub rescaling: Option<Rescaling>,
}

impl HeatProblem {
    /// `u_t - u_xx = u_x + F₁(u)`.
    pub fn source_form(initial: InitialData, f1: Nonlinearity, p: f64, horizon: f64) -> Result<Self> {
        Self::new(initial, 1.0, 0.0, f1, EquationForm::Source, 1.0, p, horizon)
    }

    /// `u_t - u_xx = u + (F₂(u))_x`.
    pub fn flux_form(initial: InitialData, f2: Nonlinearity, p: f64, horizon: f64) -> Result<Self> {
        Self::new(initial, 0.0, 1.0, f2, EquationForm::Flux, 1.0, p, horizon)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        initial: InitialData,
        drift: f64,
        reaction: f64,
        nonlinearity: Nonlinearity,
        placement: Placement,
        nonlinear_coeff: f64,
        p: f64,
        horizon: f64,
    ) -> Result<Self> {
        let problem = Self {
            initial,
            drift,
            reaction,
            nonlinearity,
            placement,
            nonlinear_coeff,
            p_norm: LpExponent::new(p)?,
            horizon,
            rescaling: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("drift", self.drift),
            ("reaction", self.reaction),
            ("nonlinear coefficient", self.nonlinear_coeff),
        ] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be > 0, got {}", self.horizon)));
        }
        self.initial.validate()
    }

    pub fn has_drift(&self) -> bool {
        self.drift != 0.0
    }

    pub fn has_reaction(&self) -> bool {
        self.reaction != 0.0
    }

    /// Coefficient of `F(u)` under the plain Duhamel integral.
    pub fn source_coeff(&self) -> f64 {
        match self.placement {
            EquationForm::Source if !self.nonlinearity.is_zero() => self.nonlinear_coeff,
            _ => 0.0,
        }
    }

    /// Coefficient of `F(u)` under the derivative Duhamel integral.
    pub fn flux_coeff(&self) -> f64 {
        match self.placement {
            EquationForm::Flux if !self.nonlinearity.is_zero() => self.nonlinear_coeff,
            _ => 0.0,
        }
    }

    /// True when the right-hand side does not depend on `u` at all.
    pub fn is_homogeneous_heat(&self) -> bool {
        self.drift == 0.0 && self.reaction == 0.0 && (self.nonlinearity.is_zero() || self.nonlinear_coeff == 0.0)
    }

    pub fn with_initial(&self, initial: InitialData) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }
}

/// Heat-form problem equivalent to the model with the given payoff as
/// terminal condition.
pub fn reduce_to_heat(model: &ModelSpec, payoff: &Payoff, nl: Nonlinearity, p: f64) -> Result<HeatProblem> {
    model.validate()?;
    payoff.validate()?;
    let drift = model.b / model.a - 1.0;
    let reaction = model.c / model.a;
    let nonlinear = -model.d / model.a;
    let mut problem = HeatProblem::new(
        InitialData::Payoff(payoff.clone()),
        drift,
        reaction,
        nl,
        model.form,
        nonlinear,
        p,
        model.heat_horizon(),
    )?;
    problem.rescaling = Some(Rescaling {
        model: model.clone(),
        drift,
        reaction,
        nonlinear,
    });
    Ok(problem)
}
