//! Duhamel term `∫_0^t Φ(·, t-s) ∗ G(·, s) ds` (and the `Φ_x` variant) by
//! product integration: `G` is interpolated linearly in `s` between time
//! nodes and each hat function is integrated exactly against the kernel,
//! using the closed-form time antiderivatives from [`crate::kernel`].
//!
//! The `(t-s)^{-1/2}` singularity of `‖Φ_x(·,t-s)‖_1` is therefore absorbed
//! into the weights. Each time-integrated kernel is sampled pointwise, then
//! its zeroth (plain) or first (derivative) moment is reset to the exact
//! value, so a window narrower than `h` collapses to the identity limit
//! (`dt·G` resp. `dt·G_x`) instead of vanishing.

use rayon::prelude::*;
use serde::Serialize;

use super::conv::{Convolver, Lifted, PreparedKernel};
use super::{Grid, SpaceTimeField};
use crate::error::{Error, Result};
use crate::kernel::{time_integral_p0, time_integral_p1, time_integral_q0, time_integral_q1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DuhamelForm {
    /// `∫ Φ(t-s) ∗ G(s) ds`
    Plain,
    /// `∫ Φ_x(t-s) ∗ G(s) ds`, equal to the plain form applied to `G_x`
    Derivative,
}

/// Discrete Young constants: `Σ_m ‖K^{n,m}‖_1 ≤ plain·t_n` and
/// `Σ_m ‖K_x^{n,m}‖_1 ≤ derivative·√t_n` for every step `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YoungConstants {
    pub plain: f64,
    pub derivative: f64,
}

struct WindowKernels {
    /// `k = 0..=steps-1`: kernel for node `m = n - k` with `1 <= m <= n`.
    interior: Vec<PreparedKernel>,
    /// `k = 1..=steps` stored at `k-1`: kernel for the node `s = 0`.
    first: Vec<PreparedKernel>,
}

/// Duhamel operator on a local time window of `steps` steps of size `dt`.
pub struct DuhamelOperator {
    conv: Convolver,
    dt: f64,
    steps: usize,
    plain: WindowKernels,
    derivative: WindowKernels,
    young: YoungConstants,
}

impl std::fmt::Debug for DuhamelOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DuhamelOperator")
            .field("conv", &self.conv)
            .field("dt", &self.dt)
            .field("steps", &self.steps)
            .field("young", &self.young)
            .finish()
    }
}

impl DuhamelOperator {
    pub fn new(grid: &Grid, steps: usize) -> Result<Self> {
        Self::with_convolver(Convolver::for_grid(grid), grid.dt(), steps)
    }

    pub fn with_convolver(conv: Convolver, dt: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Domain("Duhamel operator needs at least one step".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("time step must be > 0, got {dt}")));
        }
        let (plain, derivative) = build_window_kernels(&conv, dt, steps);
        let young = young_constants(&conv, &plain, &derivative, dt, steps);
        Ok(Self {
            conv,
            dt,
            steps,
            plain,
            derivative,
            young,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn convolver(&self) -> &Convolver {
        &self.conv
    }

    pub fn young_constants(&self) -> YoungConstants {
        self.young
    }

    /// Duhamel integrals at every node of the window for the given source
    /// slices (`G(·, s_m)`, `m = 0..=steps'` with `steps' <= steps`).
    /// Either source may be absent; the output has the same number of
    /// slices as the inputs, starting with zero at `s = 0`.
    pub fn apply(&self, plain: Option<&[Vec<f64>]>, derivative: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
        let len = plain.or(derivative).map_or(0, <[Vec<f64>]>::len);
        assert!(len >= 1 && len <= self.steps + 1, "window holds {} nodes", self.steps + 1);
        let lift = |src: Option<&[Vec<f64>]>| -> Option<Vec<Lifted>> {
            src.map(|s| {
                assert_eq!(s.len(), len);
                s.par_iter().map(|g| self.conv.lift(g)).collect()
            })
        };
        let lp = lift(plain);
        let ld = lift(derivative);
        let mut out: Vec<Vec<f64>> = (1..len)
            .into_par_iter()
            .map(|n| {
                let mut acc = self.conv.zero();
                for (lifted, kernels) in [(&lp, &self.plain), (&ld, &self.derivative)] {
                    if let Some(g) = lifted {
                        for m in 1..=n {
                            self.conv.accumulate(&mut acc, &kernels.interior[n - m], &g[m]);
                        }
                        self.conv.accumulate(&mut acc, &kernels.first[n - 1], &g[0]);
                    }
                }
                self.conv.lower(acc)
            })
            .collect();
        out.insert(0, vec![0.0; self.conv.len()]);
        out
    }
}

fn build_window_kernels(conv: &Convolver, dt: f64, steps: usize) -> (WindowKernels, WindowKernels) {
    let antiderivatives = |j: usize| {
        let tau = j as f64 * dt;
        (
            conv.sample(|x| time_integral_p0(x, tau)),
            conv.sample(|x| time_integral_p1(x, tau)),
            conv.sample(|x| time_integral_q0(x, tau)),
            conv.sample(|x| time_integral_q1(x, tau)),
        )
    };
    let bounds: Vec<_> = (0..=steps).into_par_iter().map(antiderivatives).collect();

    // hat weights on [a, b] = [j dt, (j+1) dt]:
    //   falling (b - τ)/dt -> node at lag j (A_j)
    //   rising  (τ - a)/dt -> node at lag j+1 (B_{j+1})
    let falling = |f0: &[f64], g0: &[f64], f1: &[f64], g1: &[f64], b: f64| -> Vec<f64> {
        (0..f0.len())
            .map(|i| (b * (f1[i] - f0[i]) - (g1[i] - g0[i])) / dt)
            .collect()
    };
    let rising = |f0: &[f64], g0: &[f64], f1: &[f64], g1: &[f64], a: f64| -> Vec<f64> {
        (0..f0.len())
            .map(|i| ((g1[i] - g0[i]) - a * (f1[i] - f0[i])) / dt)
            .collect()
    };

    let per_window: Vec<_> = (0..steps)
        .into_par_iter()
        .map(|j| {
            let (a, b) = (j as f64 * dt, (j + 1) as f64 * dt);
            let (p0a, p1a, q0a, q1a) = &bounds[j];
            let (p0b, p1b, q0b, q1b) = &bounds[j + 1];
            (
                falling(p0a, p1a, p0b, p1b, b),
                rising(p0a, p1a, p0b, p1b, a),
                falling(q0a, q1a, q0b, q1b, b),
                rising(q0a, q1a, q0b, q1b, a),
            )
        })
        .collect();

    let half = 0.5 * dt;
    let build = |pick: &(dyn Fn(usize) -> (Vec<f64>, Vec<f64>) + Sync), derivative: bool| -> WindowKernels {
        let fix = |mut s: Vec<f64>, mass: f64| {
            if derivative {
                fix_first_moment(conv, &mut s, -mass);
            } else {
                fix_mass(conv, &mut s, mass);
            }
            conv.prepare(s)
        };
        let interior = (0..steps)
            .into_par_iter()
            .map(|k| {
                let (fall_k, _) = pick(k);
                if k == 0 {
                    fix(fall_k, half)
                } else {
                    let (_, rise_prev) = pick(k - 1);
                    let s = fall_k.iter().zip(&rise_prev).map(|(a, b)| a + b).collect();
                    fix(s, dt)
                }
            })
            .collect();
        let first = (1..=steps)
            .into_par_iter()
            .map(|k| fix(pick(k - 1).1, half))
            .collect();
        WindowKernels { interior, first }
    };
    let plain = build(&|j| (per_window[j].0.clone(), per_window[j].1.clone()), false);
    let derivative = build(&|j| (per_window[j].2.clone(), per_window[j].3.clone()), true);
    (plain, derivative)
}

fn fix_mass(conv: &Convolver, s: &mut [f64], mass: f64) {
    let c = s.len() / 2;
    s[c] += (mass - conv.moment(s, 0)) / conv.h();
}

fn fix_first_moment(conv: &Convolver, s: &mut [f64], m1: f64) {
    let c = s.len() / 2;
    let h = conv.h();
    let corr = (m1 - conv.moment(s, 1)) / (2.0 * h * h);
    s[c + 1] += corr;
    s[c - 1] -= corr;
}

fn young_constants(
    conv: &Convolver,
    plain: &WindowKernels,
    derivative: &WindowKernels,
    dt: f64,
    steps: usize,
) -> YoungConstants {
    let worst = |k: &WindowKernels, scale: &dyn Fn(f64) -> f64| {
        let mut interior_sum = 0.0;
        let mut worst: f64 = 0.0;
        for n in 1..=steps {
            interior_sum += conv.l1_norm(k.interior[n - 1].samples());
            let total = interior_sum + conv.l1_norm(k.first[n - 1].samples());
            worst = worst.max(total / scale(n as f64 * dt));
        }
        worst
    };
    YoungConstants {
        plain: worst(plain, &|t| t),
        derivative: worst(derivative, &f64::sqrt),
    }
}

/// Heat semigroup `f ↦ Φ(·, n dt) ∗ f` at every node of a window.
pub struct HeatPropagator {
    conv: Convolver,
    kernels: Vec<PreparedKernel>,
}

impl HeatPropagator {
    pub fn new(conv: Convolver, dt: f64, steps: usize) -> Result<Self> {
        let kernels = (1..=steps)
            .into_par_iter()
            .map(|n| conv.heat_kernel_matched(n as f64 * dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { conv, kernels })
    }

    /// Slices `0..=steps` (slice 0 is `f` itself).
    pub fn evolve(&self, f: &[f64], steps: usize) -> Vec<Vec<f64>> {
        assert!(steps <= self.kernels.len());
        let lifted = self.conv.lift(f);
        let mut out: Vec<Vec<f64>> = self.kernels[..steps]
            .par_iter()
            .map(|k| {
                let mut acc = self.conv.zero();
                self.conv.accumulate(&mut acc, k, &lifted);
                self.conv.lower(acc)
            })
            .collect();
        out.insert(0, f.to_vec());
        out
    }
}

/// Duhamel integral of the field `g` evaluated at time node `t_index`.
pub fn duhamel_source(g: &SpaceTimeField, t_index: usize, form: DuhamelForm) -> Result<Vec<f64>> {
    let grid = g.grid();
    if t_index >= grid.n_t() {
        return Err(Error::Domain(format!(
            "t_index {t_index} outside 0..{}",
            grid.n_t()
        )));
    }
    g.validate()?;
    if t_index == 0 {
        return Ok(vec![0.0; grid.n_x()]);
    }
    let op = DuhamelOperator::new(grid, t_index)?;
    let slices: Vec<Vec<f64>> = (0..=t_index).map(|n| g.slice(n).to_vec()).collect();
    let out = match form {
        DuhamelForm::Plain => op.apply(Some(&slices), None),
        DuhamelForm::Derivative => op.apply(None, Some(&slices)),
    };
    Ok(out.into_iter().next_back().expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{lp_norm, DEFAULT_TAIL_EPSILON};
    use crate::kernel::{heat_kernel, heat_kernel_dx, KernelQuery};
    use approx::assert_relative_eq;

    fn grid(n_x: usize, n_t: usize) -> Grid {
        Grid::new(-15.0, 15.0, n_x, 0.5, n_t, DEFAULT_TAIL_EPSILON).unwrap()
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = grid(121, 6);
        let z = SpaceTimeField::zeros(&g);
        for form in [DuhamelForm::Plain, DuhamelForm::Derivative] {
            assert!(duhamel_source(&z, 5, form).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn constant_source_integrates_to_elapsed_time() {
        let g = grid(301, 11);
        let ones = SpaceTimeField::from_fn(&g, |_, _| 1.0).unwrap();
        for n in [1, 4, 10] {
            let out = duhamel_source(&ones, n, DuhamelForm::Plain).unwrap();
            let dx = duhamel_source(&ones, n, DuhamelForm::Derivative).unwrap();
            for j in g.trust_interior() {
                // 6σ boundary layer leaves ~2e-9 of kernel mass outside
                assert_relative_eq!(out[j], g.t(n), max_relative = 1e-8);
                assert!(dx[j].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn linear_in_time_source_converges_at_second_order_in_space() {
        // G(x,s) = Φ(x, 1) (2 + 3s): ∫_0^t Φ(t-s) ∗ Φ(1) (2 + 3s) ds = ∫ Φ(·, 1+t-s)(2+3s) ds.
        // Time integration is exact for G linear in s; what remains is O(h²)
        // from the kink of the first window's kernel at x = 0.
        let mut errs = Vec::new();
        for n_x in [601, 1201] {
            let g = grid(n_x, 9);
            let src = SpaceTimeField::from_fn(&g, |x, s| heat_kernel(KernelQuery::new(x, 1.0)) * (2.0 + 3.0 * s)).unwrap();
            let n = 8;
            let t = g.t(n);
            let out = duhamel_source(&src, n, DuhamelForm::Plain).unwrap();
            let dx = duhamel_source(&src, n, DuhamelForm::Derivative).unwrap();
            let mut err: f64 = 0.0;
            for j in (g.n_x() / 3..2 * g.n_x() / 3).step_by(7) {
                let x = g.x(j);
                let (exact, exact_dx) = gauss_legendre(0.0, t, |s| {
                    let q = KernelQuery::new(x, 1.0 + t - s);
                    ((2.0 + 3.0 * s) * heat_kernel(q), (2.0 + 3.0 * s) * heat_kernel_dx(q))
                });
                err = err.max((out[j] - exact).abs()).max((dx[j] - exact_dx).abs());
            }
            assert!(err < g.h() * g.h(), "n_x = {n_x}: {err}");
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5, "{errs:?}");
    }

    // composite 8-point Gauss-Legendre, used as an independent reference
    fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> (f64, f64)) -> (f64, f64) {
        const X: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
        const W: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
        let panels = 64;
        let w = (b - a) / panels as f64;
        let mut acc = (0.0, 0.0);
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * w;
            for (xi, wi) in X.iter().zip(W) {
                for s in [mid - 0.5 * w * xi, mid + 0.5 * w * xi] {
                    let v = f(s);
                    acc.0 += 0.5 * w * wi * v.0;
                    acc.1 += 0.5 * w * wi * v.1;
                }
            }
        }
        acc
    }

    #[test]
    fn young_constants_match_continuum() {
        let g = grid(1201, 51);
        let op = DuhamelOperator::new(&g, 50).unwrap();
        let y = op.young_constants();
        assert_relative_eq!(y.plain, 1.0, max_relative = 1e-9);
        // ∫_0^t ‖Φ_x(τ)‖_1 dτ = 2 √(t/π)
        let continuum = 2.0 / std::f64::consts::PI.sqrt();
        assert!((y.derivative / continuum - 1.0).abs() < 0.05, "{}", y.derivative);
    }

    #[test]
    fn bounds_hold_for_rough_sources() {
        let g = grid(301, 21);
        let src = SpaceTimeField::from_fn(&g, |x, s| ((7.0 * x).sin() + (x * 0.3 + s).cos()) * (-x * x / 30.0).exp()).unwrap();
        let op = DuhamelOperator::new(&g, 20).unwrap();
        let slices: Vec<Vec<f64>> = src.slices().map(<[f64]>::to_vec).collect();
        let plain = op.apply(Some(&slices), None);
        let dx = op.apply(None, Some(&slices));
        let y = op.young_constants();
        for p in [1.0, 2.0, 4.0] {
            let gnorm = crate::field::sup_t_lp_norm(&src, p).unwrap();
            for n in 1..=20 {
                let t = g.t(n);
                assert!(lp_norm(&plain[n], p, &g).unwrap() <= y.plain * t * gnorm * (1.0 + 1e-12));
                assert!(lp_norm(&dx[n], p, &g).unwrap() <= y.derivative * t.sqrt() * gnorm * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn under_resolved_window_keeps_identity_limit() {
        // dt = 1e-4 << h² = 0.01: the first window acts as dt·G
        let g = Grid::new(-15.0, 15.0, 301, 2e-4, 3, DEFAULT_TAIL_EPSILON).unwrap();
        let src = SpaceTimeField::from_fn(&g, |x, _| (-x * x).exp()).unwrap();
        let out = duhamel_source(&src, 2, DuhamelForm::Plain).unwrap();
        for j in 140..160 {
            assert_relative_eq!(out[j], 2e-4 * (-g.x(j) * g.x(j)).exp(), max_relative = 1e-3, epsilon = 1e-12);
            assert!(out[j].is_finite());
        }
    }
}
