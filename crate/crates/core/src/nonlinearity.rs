//! Globally Lipschitz right-hand-side nonlinearities with certified constants.
//!
//! The power laws `u^{4/3}` and `u^2` that come out of the risk-adjusted and
//! liquidity-cost reductions are not globally Lipschitz. [`Kind::ClampedPower`]
//! keeps `sign(v)|v|^q` on `|v| <= R` and continues with the tangent line
//! beyond `R`, so the solver stays within the Lipschitz setting. Solves
//! report when the solution leaves `[-R, R]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kind {
    Zero,
    Linear { slope: f64 },
    /// `amplitude · sin(v)`
    SatSin { amplitude: f64 },
    ClampedPower { exponent: f64, radius: f64 },
    /// Piecewise-linear interpolation of `(v, F(v))` knots, constant outside.
    Table { knots: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Nonlinearity {
    kind: Kind,
    lipschitz: f64,
}

impl Nonlinearity {
    pub fn new(kind: Kind) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidNonlinearity(m));
        match &kind {
            Kind::Zero => {}
            Kind::Linear { slope } if !slope.is_finite() => return bad(format!("slope must be finite, got {slope}")),
            Kind::SatSin { amplitude } if !amplitude.is_finite() => {
                return bad(format!("amplitude must be finite, got {amplitude}"))
            }
            Kind::ClampedPower { exponent, radius } => {
                if !(exponent.is_finite() && *exponent >= 1.0) {
                    return bad(format!("exponent must be finite and >= 1, got {exponent}"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("clamp radius must be finite and > 0, got {radius}"));
                }
            }
            Kind::Table { knots } => {
                if knots.len() < 2 {
                    return bad("table needs at least two knots".into());
                }
                if knots.iter().any(|(v, f)| !v.is_finite() || !f.is_finite()) {
                    return bad("table knots must be finite".into());
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return bad("table abscissae must be strictly increasing".into());
                }
            }
            _ => {}
        }
        let lipschitz = analytic_lipschitz(&kind);
        Ok(Self { kind, lipschitz })
    }

    pub fn zero() -> Self {
        Self::new(Kind::Zero).expect("valid")
    }

    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(Kind::Linear { slope })
    }

    pub fn sat_sin(amplitude: f64) -> Result<Self> {
        Self::new(Kind::SatSin { amplitude })
    }

    pub fn clamped_power(exponent: f64, radius: f64) -> Result<Self> {
        Self::new(Kind::ClampedPower { exponent, radius })
    }

    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(Kind::Table { knots })
    }

    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, Kind::Zero)
    }

    /// Clamp radius, if the nonlinearity is a clamped power law.
    pub fn clamp_radius(&self) -> Option<f64> {
        match self.kind {
            Kind::ClampedPower { radius, .. } => Some(radius),
            _ => None,
        }
    }

    pub fn vanishes_at_zero(&self) -> bool {
        self.eval(0.0) == 0.0
    }

    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match &self.kind {
            Kind::Zero => 0.0,
            Kind::Linear { slope } => slope * v,
            Kind::SatSin { amplitude } => amplitude * v.sin(),
            Kind::ClampedPower { exponent: q, radius: r } => {
                let a = v.abs();
                let mag = if a <= *r {
                    a.powf(*q)
                } else {
                    r.powf(*q) + q * r.powf(q - 1.0) * (a - r)
                };
                mag.copysign(v) * if v == 0.0 { 0.0 } else { 1.0 }
            }
            Kind::Table { knots } => table_eval(knots, v),
        }
    }

    pub fn certified_lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Short catalog of the supported kinds, for `--list-nonlinearities`.
    pub fn catalog() -> &'static [(&'static str, &'static str)] {
        &[
            ("zero", "F(v) = 0; L = 0"),
            ("linear", "F(v) = slope·v; L = |slope|"),
            ("sat_sin", "F(v) = amplitude·sin(v); L = |amplitude|"),
            (
                "clamped_power",
                "F(v) = sign(v)|v|^q for |v| <= R, tangent line beyond; L = q·R^(q-1)",
            ),
            ("table", "piecewise-linear through knots, constant outside; L = max segment slope"),
        ]
    }
}

fn analytic_lipschitz(kind: &Kind) -> f64 {
    match kind {
        Kind::Zero => 0.0,
        Kind::Linear { slope } => slope.abs(),
        Kind::SatSin { amplitude } => amplitude.abs(),
        Kind::ClampedPower { exponent: q, radius: r } => q * r.powf(q - 1.0),
        Kind::Table { knots } => knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max),
    }
}

fn table_eval(knots: &[(f64, f64)], v: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if v <= first.0 {
        return first.1;
    }
    if v >= last.0 {
        return last.1;
    }
    let i = knots.partition_point(|k| k.0 <= v) - 1;
    let (a, b) = (knots[i], knots[i + 1]);
    a.1 + (b.1 - a.1) * (v - a.0) / (b.0 - a.0)
}
