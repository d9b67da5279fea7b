//! Truncated space-time grids, fields on them, discrete norms, and the
//! Gaussian convolution engine behind the Duhamel operator.

mod conv;
mod duhamel;

use std::io::Write;
use std::ops::Range;

use serde::Serialize;
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::kernel::LpExponent;

pub use conv::{convolve_kernel, convolve_kernel_dx, Convolver, PreparedKernel, FFT_THRESHOLD};
pub use duhamel::{duhamel_source, DuhamelForm, DuhamelOperator, HeatPropagator, YoungConstants};

/// Default Gaussian tail mass tolerated outside the window.
pub const DEFAULT_TAIL_EPSILON: f64 = 1e-10;

/// Uniform grid on `[x_min, x_max] × [0, t_horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    x_min: f64,
    x_max: f64,
    n_x: usize,
    h: f64,
    t_horizon: f64,
    n_t: usize,
    dt: f64,
    tail_epsilon: f64,
}

/// Half-width outside of which the kernel `Φ(·,t)` carries mass below `eps`.
pub fn tail_half_width(eps: f64, t: f64) -> f64 {
    2.0 * t.sqrt() * erfc_inv(eps)
}

impl Grid {
    pub fn new(
        x_min: f64,
        x_max: f64,
        n_x: usize,
        t_horizon: f64,
        n_t: usize,
        tail_epsilon: f64,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if !x_min.is_finite() || !x_max.is_finite() || x_max <= x_min {
            problems.push(format!("window [{x_min}, {x_max}] must be finite and non-empty"));
        }
        if n_x < 2 {
            problems.push(format!("n_x must be >= 2, got {n_x}"));
        }
        if n_t < 2 {
            problems.push(format!("n_t must be >= 2, got {n_t}"));
        }
        if !(t_horizon > 0.0) || !t_horizon.is_finite() {
            problems.push(format!("t_horizon must be finite and > 0, got {t_horizon}"));
        }
        if !(tail_epsilon > 0.0 && tail_epsilon < 1.0) {
            problems.push(format!("tail_epsilon must lie in (0, 1), got {tail_epsilon}"));
        }
        if problems.is_empty() {
            let w = tail_half_width(tail_epsilon, t_horizon);
            if x_max - x_min < 2.0 * w {
                problems.push(format!(
                    "window width {:.4} is below 2W = {:.4} needed for kernel tail mass < {tail_epsilon:e} at t = {t_horizon}",
                    x_max - x_min,
                    2.0 * w
                ));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidGrid(problems.join("; ")));
        }
        Ok(Self {
            x_min,
            x_max,
            n_x,
            h: (x_max - x_min) / (n_x - 1) as f64,
            t_horizon,
            n_t,
            dt: t_horizon / (n_t - 1) as f64,
            tail_epsilon,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn tail_epsilon(&self) -> f64 {
        self.tail_epsilon
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.h
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| self.x(j)).collect()
    }

    /// Width of the boundary layer excluded from the trust interior.
    pub fn boundary_layer(&self) -> f64 {
        6.0 * (2.0 * self.t_horizon).sqrt()
    }

    /// Indices of nodes at least [`Grid::boundary_layer`] away from both edges.
    pub fn trust_interior(&self) -> Range<usize> {
        let layer = self.boundary_layer();
        let lo = ((layer / self.h) - 1e-9).ceil().max(0.0) as usize;
        let hi = self.n_x.saturating_sub(lo);
        lo.min(hi)..hi
    }
}

/// `u(x_j, t_n)` on a [`Grid`], stored row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: Grid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.n_x * grid.n_t],
            grid: grid.clone(),
        }
    }

    pub fn from_slices(grid: &Grid, slices: &[Vec<f64>]) -> Result<Self> {
        if slices.len() != grid.n_t || slices.iter().any(|s| s.len() != grid.n_x) {
            return Err(Error::InvalidGrid(format!(
                "expected {} slices of length {}",
                grid.n_t, grid.n_x
            )));
        }
        let field = Self {
            grid: grid.clone(),
            values: slices.concat(),
        };
        field.validate()?;
        Ok(field)
    }

    /// Samples `f(x, t)` on every grid node.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mut field = Self::zeros(grid);
        for n in 0..grid.n_t {
            let t = grid.t(n);
            for (j, v) in field.slice_mut(n).iter_mut().enumerate() {
                *v = f(grid.x(j), t);
            }
        }
        field.validate()?;
        Ok(field)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        &self.values[n * self.grid.n_x..(n + 1) * self.grid.n_x]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let nx = self.grid.n_x;
        &mut self.values[n * nx..(n + 1) * nx]
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.n_x)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(idx) = self.values.iter().position(|v| !v.is_finite()) {
            let (n, j) = (idx / self.grid.n_x, idx % self.grid.n_x);
            return Err(Error::NonFinite(format!("field value at (x_{j}, t_{n})")));
        }
        Ok(())
    }

    /// Cubic Lagrange interpolation in `x` on time slice `n`.
    pub fn interpolate(&self, x: f64, n: usize) -> Result<f64> {
        interpolate_slice(&self.grid, self.slice(n), x)
    }

    /// Writes `x, u(·,t_0), u(·,t_1), ...` with a metadata comment line.
    pub fn write_csv<W: Write>(&self, mut out: W, manifest_hash: &str) -> Result<()> {
        let g = &self.grid;
        writeln!(
            out,
            "# x_min={} x_max={} n_x={} h={} t_horizon={} n_t={} dt={} manifest={}",
            g.x_min, g.x_max, g.n_x, g.h, g.t_horizon, g.n_t, g.dt, manifest_hash
        )?;
        write!(out, "x")?;
        for n in 0..g.n_t {
            write!(out, ",t={}", g.t(n))?;
        }
        writeln!(out)?;
        for j in 0..g.n_x {
            write!(out, "{}", g.x(j))?;
            for n in 0..g.n_t {
                write!(out, ",{}", self.values[n * g.n_x + j])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

pub(crate) fn interpolate_slice(grid: &Grid, slice: &[f64], x: f64) -> Result<f64> {
    if !(x >= grid.x_min && x <= grid.x_max) {
        return Err(Error::Domain(format!(
            "x = {x} outside window [{}, {}]",
            grid.x_min, grid.x_max
        )));
    }
    let n = grid.n_x;
    let s = (x - grid.x_min) / grid.h;
    if n < 4 {
        let j = (s.floor() as usize).min(n - 2);
        let w = s - j as f64;
        return Ok((1.0 - w) * slice[j] + w * slice[j + 1]);
    }
    let j0 = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut acc = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (s - (j0 + b) as f64) / (a as f64 - b as f64);
            }
        }
        acc += w * slice[j0 + a];
    }
    Ok(acc)
}

pub(crate) fn lp_norm_with_step(slice: &[f64], p: LpExponent, h: f64) -> f64 {
    if p.is_infinite() {
        return slice.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    let p = p.value();
    if p == 1.0 {
        return h * slice.iter().map(|v| v.abs()).sum::<f64>();
    }
    if p == 2.0 {
        return (h * slice.iter().map(|v| v * v).sum::<f64>()).sqrt();
    }
    // scale by the max to keep |u|^p representable for large p
    let m = slice.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = slice.iter().map(|v| (v.abs() / m).powf(p)).sum();
    m * (h * s).powf(1.0 / p)
}

/// Discrete `L^p` norm `(h Σ_j |u_j|^p)^{1/p}`; `p = ∞` gives `max_j |u_j|`.
///
/// Each node carries a cell of width `h`, so a constant `c` has norm
/// `c (n_x h)^{1/p}`.
pub fn lp_norm(slice: &[f64], p: f64, grid: &Grid) -> Result<f64> {
    let p = LpExponent::new(p)?;
    if slice.len() != grid.n_x {
        return Err(Error::Domain(format!(
            "slice length {} does not match n_x = {}",
            slice.len(),
            grid.n_x
        )));
    }
    Ok(lp_norm_with_step(slice, p, grid.h))
}

/// `max_n ‖u(·, t_n)‖_p`.
pub fn sup_t_lp_norm(u: &SpaceTimeField, p: f64) -> Result<f64> {
    let p = LpExponent::new(p)?;
    Ok(sup_lp(u.slices(), p, u.grid.h))
}

pub(crate) fn sup_lp<'a>(slices: impl IntoIterator<Item = &'a [f64]>, p: LpExponent, h: f64) -> f64 {
    slices
        .into_iter()
        .map(|s| lp_norm_with_step(s, p, h))
        .fold(0.0, f64::max)
}

/// Sup-in-time `L^p` distance between two families of slices.
pub(crate) fn sup_lp_distance(a: &[Vec<f64>], b: &[Vec<f64>], p: LpExponent, h: f64) -> f64 {
    let mut diff = vec![0.0; a.first().map_or(0, Vec::len)];
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            for ((d, u), v) in diff.iter_mut().zip(x).zip(y) {
                *d = u - v;
            }
            lp_norm_with_step(&diff, p, h)
        })
        .fold(0.0, f64::max)
}
