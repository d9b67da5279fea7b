use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::field::{lp_norm_with_step, SpaceTimeField};
use crate::kernel::{heat_kernel, kernel_dx_lp_norm, kernel_lp_norm, KernelQuery, CONSTANTS_TABLE_VERSION};
use crate::oracle::{
    bs_closed_form, exact_drift_reaction, fd_solve, has_closed_form, kernel_norm_by_quadrature, power_law_slope,
};
use crate::picard::{measure_contraction, picard_solve, solution_map_lipschitz, GRID_ALLOWANCE};
use crate::transform::Payoff;

pub const LOCK_FILE: &str = ".semibs.lock";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Exclusive ownership of an output directory for the life of a run.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Io(std::io::Error::new(
                e.kind(),
                format!("output directory {} is locked by another run ({})", dir.display(), path.display()),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Plain-text manifest; its SHA-256 tags every other output.
pub fn manifest_text(cfg: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str(&format!("semibs {}\n", env!("CARGO_PKG_VERSION")));
    s.push_str(&format!("config_sha256 = {}\n", cfg.config_hash));
    s.push_str(&format!("constants_table_version = {CONSTANTS_TABLE_VERSION}\n"));
    s.push_str(&format!("seed = {}\n", cfg.seed));
    let tasks: Vec<&str> = cfg.tasks.iter().map(|t| t.name()).collect();
    s.push_str(&format!("tasks = {}\n", tasks.join(",")));
    let g = &cfg.grid;
    s.push_str(&format!(
        "grid = x[{}, {}] n_x={} t[0, {}] n_t={} tail_epsilon={}\n",
        g.x_min(),
        g.x_max(),
        g.n_x(),
        g.t_horizon(),
        g.n_t(),
        g.tail_epsilon()
    ));
    let pb = &cfg.problem;
    s.push_str(&format!(
        "heat_form = drift={} reaction={} placement={:?} coefficient={} p={}\n",
        pb.drift,
        pb.reaction,
        pb.placement,
        pb.nonlinear_coeff,
        pb.p_norm.value()
    ));
    if let Some(r) = &pb.rescaling {
        let m = &r.model;
        s.push_str(&format!(
            "rescaling = A={} B={} C={} D={} T={} x=ln(S) t=A(T-tau)\n",
            m.a, m.b, m.c, m.d, m.maturity
        ));
    }
    s
}

pub fn manifest_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskOutcome {
    pub task: Task,
    pub passed: bool,
    /// Failing check, or a short summary.
    pub detail: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub manifest: String,
    pub outcomes: Vec<TaskOutcome>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    manifest: &'a str,
    task: &'static str,
    passed: bool,
    result: &'a T,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    hash: String,
}

impl Ctx<'_> {
    fn write_json<T: Serialize>(&self, name: &str, task: Task, passed: bool, result: &T) -> Result<String> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(
            &mut w,
            &Envelope {
                manifest: &self.hash,
                task: task.name(),
                passed,
                result,
            },
        )?;
        writeln!(w)?;
        w.flush()?;
        Ok(name.to_string())
    }

    fn write_csv(&self, name: &str, field: &SpaceTimeField) -> Result<String> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        field.write_csv(&mut w, &self.hash)?;
        w.flush()?;
        Ok(name.to_string())
    }
}

/// Runs every task in order; task failures are recorded, not propagated.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let dir = cfg.output_dir.as_path();
    let _lock = OutputLock::acquire(dir)?;
    let text = manifest_text(cfg);
    let hash = manifest_hash(&text);
    fs::write(dir.join(MANIFEST_FILE), &text)?;
    let ctx = Ctx { cfg, dir, hash };
    let mut outcomes = Vec::new();
    for &task in &cfg.tasks {
        info!("running {}", task.name());
        let outcome = match run_task(&ctx, task) {
            Ok(o) => o,
            Err(e) => TaskOutcome {
                task,
                passed: false,
                detail: e.to_string(),
                files: Vec::new(),
            },
        };
        if outcome.passed {
            info!("{}: passed ({})", task.name(), outcome.detail);
        } else {
            warn!("{}: FAILED: {}", task.name(), outcome.detail);
        }
        outcomes.push(outcome);
    }
    let summary = RunSummary {
        manifest: ctx.hash.clone(),
        outcomes,
    };
    let mut w = BufWriter::new(File::create(dir.join("run_summary.json"))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(summary)
}

fn run_task(ctx: &Ctx, task: Task) -> Result<TaskOutcome> {
    match task {
        Task::Solve => task_solve(ctx),
        Task::ContractionScan => task_contraction(ctx),
        Task::LipschitzCheck => task_lipschitz(ctx),
        Task::OracleCompare => task_oracle(ctx),
        Task::KernelSelftest => {
            let report = kernel_selftest();
            let file = ctx.write_json("kernel_selftest.json", task, report.passed, &report)?;
            Ok(TaskOutcome {
                task,
                passed: report.passed,
                detail: format!(
                    "max relative error {:.2e}, max slope error {:.2e}",
                    report.max_relative_error, report.max_slope_error
                ),
                files: vec![file],
            })
        }
    }
}

fn task_solve(ctx: &Ctx) -> Result<TaskOutcome> {
    let cfg = ctx.cfg;
    let (u, report) = picard_solve(&cfg.problem, &cfg.grid, &cfg.picard)?;
    let passed = report.certificate_holds();
    let files = vec![
        ctx.write_csv("solution.csv", &u)?,
        ctx.write_json("solve_report.json", Task::Solve, passed, &report)?,
    ];
    let detail = if passed {
        format!(
            "{} subinterval(s), iterations {:?}, final residual {:.2e}{}",
            report.subintervals.len(),
            report.iterations_per_subinterval(),
            report.final_residual,
            if report.clamp_activated { ", clamp activated" } else { "" }
        )
    } else {
        "contraction certificate: measured ratio exceeds the envelope".into()
    };
    Ok(TaskOutcome {
        task: Task::Solve,
        passed,
        detail,
        files,
    })
}

fn task_contraction(ctx: &Ctx) -> Result<TaskOutcome> {
    let cfg = ctx.cfg;
    let scan = measure_contraction(&cfg.problem, &cfg.grid, &cfg.picard, cfg.diagnostics.trials, cfg.seed)?;
    let max = scan.max_ratio();
    let passed = max < 1.0 && max <= scan.theoretical_bound * (1.0 + GRID_ALLOWANCE);
    let file = ctx.write_json("contraction_scan.json", Task::ContractionScan, passed, &scan)?;
    Ok(TaskOutcome {
        task: Task::ContractionScan,
        passed,
        detail: format!("max ratio {max:.4} vs bound {:.4}", scan.theoretical_bound),
        files: vec![file],
    })
}

#[derive(Serialize)]
struct LipschitzScan {
    checks: Vec<crate::picard::LipschitzCheck>,
    worst_margin: f64,
}

fn task_lipschitz(ctx: &Ctx) -> Result<TaskOutcome> {
    let cfg = ctx.cfg;
    let grid = &cfg.grid;
    let f = cfg.problem.initial.sample(grid)?;
    let scale = lp_norm_with_step(&f, cfg.problem.p_norm, grid.h()).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = grid.x_max() - grid.x_min();
    let mut checks = Vec::new();
    for _ in 0..cfg.diagnostics.lipschitz_pairs {
        let c = grid.x_min() + width * rng.gen_range(0.3..0.7);
        let s = rng.gen_range(0.05..0.5) * width / 8.0;
        let eps = scale * 10f64.powf(rng.gen_range(-4.0..-1.0));
        let g: Vec<f64> = f
            .iter()
            .zip(grid.xs())
            .map(|(v, x)| v + eps * heat_kernel(KernelQuery::new(x - c, s * s)))
            .collect();
        checks.push(solution_map_lipschitz(&cfg.problem, grid, &cfg.picard, &f, &g)?);
    }
    let worst_margin = checks.iter().map(|c| c.ratio / c.bound).fold(0.0, f64::max);
    let passed = checks.iter().all(|c| c.holds());
    let result = LipschitzScan { checks, worst_margin };
    let file = ctx.write_json("lipschitz_check.json", Task::LipschitzCheck, passed, &result)?;
    Ok(TaskOutcome {
        task: Task::LipschitzCheck,
        passed,
        detail: format!("worst ratio/bound {worst_margin:.4}"),
        files: vec![file],
    })
}

#[derive(Serialize)]
struct OracleComparison {
    oracle: &'static str,
    /// Maximum absolute discrepancy over the trust interior at the final time.
    max_error: f64,
    allowed: f64,
    spot: Option<f64>,
    price: Option<f64>,
    reference_price: Option<f64>,
    relative_price_error: Option<f64>,
}

fn task_oracle(ctx: &Ctx) -> Result<TaskOutcome> {
    let cfg = ctx.cfg;
    let grid = &cfg.grid;
    let (u, _) = picard_solve(&cfg.problem, grid, &cfg.picard)?;
    let last = grid.n_t() - 1;
    let interior = grid.trust_interior();
    let (h, dt) = (grid.h(), grid.dt());
    let mut files = vec![ctx.write_csv("solution.csv", &u)?];

    let classical = cfg.model.as_ref().zip(cfg.payoff.as_ref()).filter(|(m, p)| {
        m.is_classical() && bs_closed_form(m, p, 1.0, 0.0).is_ok() && cfg.problem.nonlinearity.is_zero()
    });
    let result = if let Some((model, payoff)) = classical {
        let spot = cfg.oracle.spot.unwrap_or(match payoff {
            Payoff::Call { strike } | Payoff::Put { strike } => *strike,
            Payoff::CallSpread { lower, upper } => (lower * upper).sqrt(),
            Payoff::Custom { .. } => grid.x((grid.n_x() - 1) / 2).exp(),
        });
        let x0 = spot.ln();
        if !interior.contains(&(((x0 - grid.x_min()) / h).round() as usize)) {
            return Err(Error::Domain(format!("spot {spot} lies outside the trust interior")));
        }
        let price = u.interpolate(x0, last)?;
        let reference = bs_closed_form(model, payoff, spot, 0.0)?;
        let rel = (price - reference).abs() / reference.abs().max(1e-300);
        let max_error = interior
            .clone()
            .map(|j| {
                let s = grid.x(j).exp();
                (u.slice(last)[j] - bs_closed_form(model, payoff, s, 0.0).unwrap_or(f64::NAN)).abs()
            })
            .fold(0.0, f64::max);
        OracleComparison {
            oracle: "black_scholes_closed_form",
            max_error,
            allowed: 1e-3,
            spot: Some(spot),
            price: Some(price),
            reference_price: Some(reference),
            relative_price_error: Some(rel),
        }
    } else if has_closed_form(&cfg.problem) {
        let exact = exact_drift_reaction(&cfg.problem, &grid.xs(), grid.t_horizon())?;
        let max_error = interior.map(|j| (u.slice(last)[j] - exact[j]).abs()).fold(0.0, f64::max);
        OracleComparison {
            oracle: "exact_drift_reaction",
            max_error,
            allowed: 5.0 * (h * h + dt),
            spot: None,
            price: None,
            reference_price: None,
            relative_price_error: None,
        }
    } else {
        let fd = fd_solve(&cfg.problem, &cfg.oracle.fd)?;
        files.push(ctx.write_csv("oracle_fd.csv", &fd)?);
        if fd.grid().n_x() != grid.n_x() || fd.grid().n_t() != grid.n_t() {
            return Err(Error::Domain(
                "finite-difference comparison needs the solver's resolution".into(),
            ));
        }
        let max_error = interior
            .map(|j| (u.slice(last)[j] - fd.slice(last)[j]).abs())
            .fold(0.0, f64::max);
        OracleComparison {
            oracle: "finite_difference",
            max_error,
            allowed: 10.0 * (h * h + dt * dt),
            spot: None,
            price: None,
            reference_price: None,
            relative_price_error: None,
        }
    };
    let passed = match result.relative_price_error {
        Some(rel) => rel < result.allowed,
        None => result.max_error <= result.allowed,
    };
    let detail = match result.relative_price_error {
        Some(rel) => format!(
            "price {:.6} vs closed form {:.6} (relative error {rel:.2e}, allowed 1e-3)",
            result.price.unwrap_or(f64::NAN),
            result.reference_price.unwrap_or(f64::NAN)
        ),
        None => format!(
            "{}: max error {:.3e}, allowed {:.3e}",
            result.oracle, result.max_error, result.allowed
        ),
    };
    files.push(ctx.write_json("oracle_compare.json", Task::OracleCompare, passed, &result)?);
    Ok(TaskOutcome {
        task: Task::OracleCompare,
        passed,
        detail,
        files,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestRow {
    pub p: f64,
    pub t: f64,
    pub kernel_relative_error: f64,
    pub kernel_dx_relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeRow {
    pub p: f64,
    pub kernel_slope: f64,
    pub kernel_expected: f64,
    pub kernel_dx_slope: f64,
    pub kernel_dx_expected: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestReport {
    pub rows: Vec<SelftestRow>,
    pub slopes: Vec<SlopeRow>,
    pub max_relative_error: f64,
    pub max_slope_error: f64,
    pub passed: bool,
}

pub const SELFTEST_P: [f64; 3] = [1.0, 2.0, 3.0];
pub const SELFTEST_T: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Closed-form kernel norms against quadrature, and their scaling in `t`.
pub fn kernel_selftest() -> SelftestReport {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for p in SELFTEST_P {
        let mut plain = Vec::new();
        let mut dx = Vec::new();
        for t in SELFTEST_T {
            let qp = kernel_norm_by_quadrature(p, t, false).unwrap_or(f64::NAN);
            let qd = kernel_norm_by_quadrature(p, t, true).unwrap_or(f64::NAN);
            rows.push(SelftestRow {
                p,
                t,
                kernel_relative_error: rel(kernel_lp_norm(p, t).unwrap_or(f64::NAN), qp),
                kernel_dx_relative_error: rel(kernel_dx_lp_norm(p, t).unwrap_or(f64::NAN), qd),
            });
            plain.push(qp);
            dx.push(qd);
        }
        slopes.push(SlopeRow {
            p,
            kernel_slope: power_law_slope(&SELFTEST_T, &plain),
            kernel_expected: -(1.0 - 1.0 / p) / 2.0,
            kernel_dx_slope: power_law_slope(&SELFTEST_T, &dx),
            kernel_dx_expected: -(1.0 - 1.0 / (2.0 * p)),
        });
    }
    let max_relative_error = rows
        .iter()
        .flat_map(|r| [r.kernel_relative_error, r.kernel_dx_relative_error])
        .fold(0.0, |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
    let max_slope_error = slopes
        .iter()
        .flat_map(|s| [(s.kernel_slope - s.kernel_expected).abs(), (s.kernel_dx_slope - s.kernel_dx_expected).abs()])
        .fold(0.0, |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
    SelftestReport {
        passed: max_relative_error < 1e-8 && max_slope_error < 1e-6,
        rows,
        slopes,
        max_relative_error,
        max_slope_error,
    }
}
