use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid;
use crate::error::{Error, Result};
use crate::kernel::{heat_kernel, heat_kernel_dx, KernelQuery};

/// Grids with at least this many points convolve in the frequency domain.
pub const FFT_THRESHOLD: usize = 256;

#[derive(Clone)]
struct FftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Linear (zero-padded) convolution `(K ∗ g)_i = h Σ_j K((i-j)h) g_j` on a
/// fixed number of points.
#[derive(Clone)]
pub struct Convolver {
    n: usize,
    h: f64,
    fft: Option<FftPlan>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("n", &self.n)
            .field("h", &self.h)
            .field("fft_len", &self.fft.as_ref().map(|p| p.len))
            .finish()
    }
}

/// Kernel samples at offsets `d h`, `d ∈ [-(n-1), n-1]`, plus their spectrum
/// when the convolver works in the frequency domain.
#[derive(Debug, Clone)]
pub struct PreparedKernel {
    samples: Vec<f64>,
    spectrum: Option<Vec<Complex64>>,
}

impl PreparedKernel {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

pub(crate) enum Lifted {
    Spatial(Vec<f64>),
    Spectral(Vec<Complex64>),
}

impl Convolver {
    pub fn new(n: usize, h: f64) -> Self {
        Self::with_backend(n, h, n >= FFT_THRESHOLD)
    }

    pub fn with_backend(n: usize, h: f64, use_fft: bool) -> Self {
        let fft = use_fft.then(|| {
            let len = (2 * n - 1).next_power_of_two();
            let mut planner = FftPlanner::new();
            FftPlan {
                len,
                forward: planner.plan_fft_forward(len),
                inverse: planner.plan_fft_inverse(len),
            }
        });
        Self { n, h, fft }
    }

    pub fn for_grid(grid: &Grid) -> Self {
        Self::new(grid.n_x(), grid.h())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    /// Samples `k(d h)` for every offset `d`.
    pub fn sample(&self, k: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.n as isize;
        (-(n - 1)..n).map(|d| k(d as f64 * self.h)).collect()
    }

    /// `h Σ_d |K_d|`.
    pub fn l1_norm(&self, samples: &[f64]) -> f64 {
        self.h * samples.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `h Σ_d (d h)^k K_d`.
    pub fn moment(&self, samples: &[f64], k: i32) -> f64 {
        let n = self.n as isize;
        self.h
            * samples
                .iter()
                .zip(-(n - 1)..n)
                .map(|(v, d)| (d as f64 * self.h).powi(k) * v)
                .sum::<f64>()
    }

    pub fn prepare(&self, samples: Vec<f64>) -> PreparedKernel {
        assert_eq!(samples.len(), 2 * self.n - 1, "kernel sample count");
        let spectrum = self.fft.as_ref().map(|plan| {
            let mut buf = vec![Complex64::new(0.0, 0.0); plan.len];
            let n = self.n as isize;
            for (v, d) in samples.iter().zip(-(n - 1)..n) {
                buf[d.rem_euclid(plan.len as isize) as usize] = Complex64::new(*v, 0.0);
            }
            plan.forward.process(&mut buf);
            buf
        });
        PreparedKernel { samples, spectrum }
    }

    pub(crate) fn lift(&self, g: &[f64]) -> Lifted {
        debug_assert_eq!(g.len(), self.n);
        match &self.fft {
            None => Lifted::Spatial(g.to_vec()),
            Some(plan) => {
                let mut buf = vec![Complex64::new(0.0, 0.0); plan.len];
                for (b, v) in buf.iter_mut().zip(g) {
                    *b = Complex64::new(*v, 0.0);
                }
                plan.forward.process(&mut buf);
                Lifted::Spectral(buf)
            }
        }
    }

    pub(crate) fn zero(&self) -> Lifted {
        match &self.fft {
            None => Lifted::Spatial(vec![0.0; self.n]),
            Some(plan) => Lifted::Spectral(vec![Complex64::new(0.0, 0.0); plan.len]),
        }
    }

    /// `acc += K ∗ g` (unscaled in the spectral case; see [`Convolver::lower`]).
    pub(crate) fn accumulate(&self, acc: &mut Lifted, k: &PreparedKernel, g: &Lifted) {
        match (acc, g) {
            (Lifted::Spatial(acc), Lifted::Spatial(g)) => {
                let n = self.n;
                for (i, a) in acc.iter_mut().enumerate() {
                    // K index for offset i - j is (i - j) + n - 1
                    let window = &k.samples[i..i + n];
                    let s: f64 = window.iter().rev().zip(g).map(|(kv, gv)| kv * gv).sum();
                    *a += self.h * s;
                }
            }
            (Lifted::Spectral(acc), Lifted::Spectral(g)) => {
                let spec = k.spectrum.as_ref().expect("kernel prepared for FFT");
                for ((a, kv), gv) in acc.iter_mut().zip(spec).zip(g) {
                    *a += kv * gv;
                }
            }
            _ => unreachable!("mixed convolution backends"),
        }
    }

    pub(crate) fn lower(&self, acc: Lifted) -> Vec<f64> {
        match acc {
            Lifted::Spatial(v) => v,
            Lifted::Spectral(mut buf) => {
                let plan = self.fft.as_ref().expect("spectral accumulator");
                plan.inverse.process(&mut buf);
                let scale = self.h / plan.len as f64;
                buf[..self.n].iter().map(|c| c.re * scale).collect()
            }
        }
    }

    pub fn convolve(&self, k: &PreparedKernel, g: &[f64]) -> Vec<f64> {
        let lifted = self.lift(g);
        let mut acc = self.zero();
        self.accumulate(&mut acc, k, &lifted);
        self.lower(acc)
    }

    fn check_resolution(&self, dt_step: f64) -> Result<()> {
        if !(dt_step > 0.0) || !dt_step.is_finite() {
            return Err(Error::Domain(format!("kernel step must be > 0, got {dt_step}")));
        }
        let std_dev = (2.0 * dt_step).sqrt();
        if std_dev < 2.0 * self.h {
            return Err(Error::Resolution {
                std_dev,
                two_h: 2.0 * self.h,
            });
        }
        Ok(())
    }

    /// `Φ(·, t)` sampled pointwise and rescaled to unit discrete mass.
    pub fn heat_kernel(&self, t: f64) -> Result<PreparedKernel> {
        self.check_resolution(t)?;
        let mut s = self.sample(|x| heat_kernel(KernelQuery::new(x, t)));
        let mass = self.moment(&s, 0);
        s.iter_mut().for_each(|v| *v /= mass);
        Ok(self.prepare(s))
    }

    /// `Φ(·, t)` for any `t > 0`. Below the resolution limit the samples get
    /// their mass reset to 1 and second moment to `2t` through the centre and
    /// `±h` offsets, which tends to the explicit three-point stencil as `t → 0`.
    pub(crate) fn heat_kernel_matched(&self, t: f64) -> Result<PreparedKernel> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("kernel step must be > 0, got {t}")));
        }
        if (2.0 * t).sqrt() >= 2.0 * self.h || self.n < 2 {
            return self.heat_kernel(t);
        }
        let mut s = self.sample(|x| heat_kernel(KernelQuery::new(x, t)));
        let c = self.n - 1;
        let beta = (2.0 * t - self.moment(&s, 2)) / (2.0 * self.h * self.h * self.h);
        let alpha = (1.0 - self.moment(&s, 0)) / self.h - 2.0 * beta;
        s[c] += alpha;
        s[c - 1] += beta;
        s[c + 1] += beta;
        Ok(self.prepare(s))
    }

    /// `Φ_x(·, t)` sampled pointwise and rescaled to first moment `-1`.
    pub fn heat_kernel_dx(&self, t: f64) -> Result<PreparedKernel> {
        self.check_resolution(t)?;
        let mut s = self.sample(|x| heat_kernel_dx(KernelQuery::new(x, t)));
        let m1 = self.moment(&s, 1);
        s.iter_mut().for_each(|v| *v /= -m1);
        Ok(self.prepare(s))
    }
}

/// One step of the heat semigroup: `Φ(·, dt_step) ∗ slice`.
pub fn convolve_kernel(slice: &[f64], dt_step: f64, grid: &Grid) -> Result<Vec<f64>> {
    check_len(slice, grid)?;
    let conv = Convolver::for_grid(grid);
    let k = conv.heat_kernel(dt_step)?;
    Ok(conv.convolve(&k, slice))
}

/// `Φ_x(·, dt_step) ∗ slice`, i.e. the derivative of [`convolve_kernel`].
pub fn convolve_kernel_dx(slice: &[f64], dt_step: f64, grid: &Grid) -> Result<Vec<f64>> {
    check_len(slice, grid)?;
    let conv = Convolver::for_grid(grid);
    let k = conv.heat_kernel_dx(dt_step)?;
    Ok(conv.convolve(&k, slice))
}

fn check_len(slice: &[f64], grid: &Grid) -> Result<()> {
    if slice.len() != grid.n_x() {
        return Err(Error::Domain(format!(
            "slice length {} does not match n_x = {}",
            slice.len(),
            grid.n_x()
        )));
    }
    if slice.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("convolution input".into()));
    }
    Ok(())
}
