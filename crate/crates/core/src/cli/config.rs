//! TOML run configuration. Parsing reports every violation it finds:
//! unknown keys (with their dotted path), type errors, and component
//! invariants.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{tail_half_width, Grid, DEFAULT_TAIL_EPSILON};
use crate::kernel::LpExponent;
use crate::nonlinearity::{Kind, Nonlinearity};
use crate::oracle::FdConfig;
use crate::picard::PicardConfig;
use crate::transform::{reduce_to_heat, EquationForm, GaussianBump, HeatProblem, InitialData, ModelSpec, Payoff};

pub const DEFAULT_N_X: usize = 1024;
pub const DEFAULT_N_T: usize = 101;
pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_LIPSCHITZ_PAIRS: usize = 20;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_OUTPUT_DIR: &str = "semibs-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Solve,
    ContractionScan,
    LipschitzCheck,
    OracleCompare,
    KernelSelftest,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Solve,
        Task::ContractionScan,
        Task::LipschitzCheck,
        Task::OracleCompare,
        Task::KernelSelftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Solve => "solve",
            Task::ContractionScan => "contraction_scan",
            Task::LipschitzCheck => "lipschitz_check",
            Task::OracleCompare => "oracle_compare",
            Task::KernelSelftest => "kernel_selftest",
        }
    }

    fn parse(s: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub trials: usize,
    pub lipschitz_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSettings {
    /// Spot at which model prices are compared (defaults to the strike).
    pub spot: Option<f64>,
    pub fd: FdConfig,
}

/// Fully validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: HeatProblem,
    pub model: Option<ModelSpec>,
    pub payoff: Option<Payoff>,
    pub grid: Grid,
    pub picard: PicardConfig,
    pub tasks: Vec<Task>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub diagnostics: Diagnostics,
    pub oracle: OracleSettings,
    /// SHA-256 of the configuration text.
    pub config_hash: String,
}

#[derive(Debug, Default, Deserialize)]
struct RawConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    tasks: Option<Vec<String>>,
    p: Option<f64>,
    model: Option<RawModel>,
    payoff: Option<Payoff>,
    heat: Option<RawHeat>,
    nonlinearity: Option<Kind>,
    #[serde(default)]
    grid: RawGrid,
    #[serde(default)]
    picard: RawPicard,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    #[serde(default)]
    oracle: RawOracle,
}

#[derive(Debug, Deserialize)]
struct RawModel {
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
    d: Option<f64>,
    sigma: f64,
    r: f64,
    maturity: f64,
    form: Option<EquationForm>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawInitial {
    Zero,
    Gaussians { bumps: Vec<GaussianBump> },
}

#[derive(Debug, Deserialize)]
struct RawHeat {
    placement: EquationForm,
    drift: Option<f64>,
    reaction: Option<f64>,
    coefficient: Option<f64>,
    horizon: f64,
    initial: RawInitial,
}

#[derive(Debug, Default, Deserialize)]
struct RawGrid {
    x_min: Option<f64>,
    x_max: Option<f64>,
    n_x: Option<usize>,
    n_t: Option<usize>,
    tail_epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawPicard {
    tol: Option<f64>,
    max_iter: Option<usize>,
    safety: Option<f64>,
    c_env: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct RawDiagnostics {
    trials: Option<usize>,
    lipschitz_pairs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct RawOracle {
    spot: Option<f64>,
    theta: Option<f64>,
    fd_n_x: Option<usize>,
    fd_n_t: Option<usize>,
}

/// Allowed keys per table; `*` marks array-of-table elements.
const SCHEMA: &[(&str, &[&str])] = &[
    (
        "",
        &[
            "seed", "output_dir", "tasks", "p", "model", "payoff", "heat", "nonlinearity", "grid", "picard",
            "diagnostics", "oracle",
        ],
    ),
    ("model", &["a", "b", "c", "d", "sigma", "r", "maturity", "form"]),
    ("payoff", &["kind", "strike", "lower", "upper", "table"]),
    ("heat", &["placement", "drift", "reaction", "coefficient", "horizon", "initial"]),
    ("heat.initial", &["kind", "bumps"]),
    ("heat.initial.bumps.*", &["weight", "center", "time"]),
    ("nonlinearity", &["kind", "slope", "amplitude", "exponent", "radius", "knots"]),
    ("grid", &["x_min", "x_max", "n_x", "n_t", "tail_epsilon"]),
    ("picard", &["tol", "max_iter", "safety", "c_env"]),
    ("diagnostics", &["trials", "lipschitz_pairs"]),
    ("oracle", &["spot", "theta", "fd_n_x", "fd_n_t"]),
];

fn unknown_keys(table: &toml::Table, path: &str, out: &mut Vec<String>) {
    let Some((_, allowed)) = SCHEMA.iter().find(|(p, _)| *p == path) else {
        return;
    };
    for (key, value) in table {
        let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        if !allowed.contains(&key.as_str()) {
            out.push(format!("{child}: unknown key"));
            continue;
        }
        match value {
            toml::Value::Table(t) => unknown_keys(t, &child, out),
            toml::Value::Array(items) => {
                for item in items {
                    if let toml::Value::Table(t) = item {
                        unknown_keys(t, &format!("{child}.*"), out);
                    }
                }
            }
            _ => {}
        }
    }
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Parses and validates a configuration, collecting every violation.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut errors = Vec::new();
    unknown_keys(&table, "", &mut errors);
    let raw: RawConfig = match toml::Value::Table(table).try_into() {
        Ok(r) => r,
        Err(e) => {
            if errors.is_empty() {
                errors.push(e.to_string().trim().to_string());
            }
            return Err(Error::Config(errors));
        }
    };
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    build(raw, config_hash(text)).map_err(Error::Config)
}

fn build(raw: RawConfig, config_hash: String) -> std::result::Result<RunConfig, Vec<String>> {
    let mut errors: Vec<String> = Vec::new();
    let p = raw.p.unwrap_or(2.0);
    if let Err(e) = LpExponent::new(p) {
        errors.push(format!("p: {e}"));
    }

    let tasks = match &raw.tasks {
        None => vec![Task::Solve],
        Some(names) => {
            let mut tasks = Vec::new();
            for (i, n) in names.iter().enumerate() {
                match Task::parse(n) {
                    Some(t) => tasks.push(t),
                    None => errors.push(format!(
                        "tasks[{i}]: unknown task {n:?} (expected one of {})",
                        Task::ALL.map(Task::name).join(", ")
                    )),
                }
            }
            if names.is_empty() {
                errors.push("tasks: at least one task is required".into());
            }
            tasks
        }
    };

    let nonlinearity = match raw.nonlinearity.clone().map(Nonlinearity::new).transpose() {
        Ok(nl) => nl.unwrap_or_else(Nonlinearity::zero),
        Err(e) => {
            errors.push(format!("nonlinearity: {e}"));
            Nonlinearity::zero()
        }
    };

    let mut model = None;
    let mut center = 0.0;
    let (problem, horizon) = match (&raw.model, &raw.heat) {
        (Some(_), Some(_)) => {
            errors.push("model and heat are mutually exclusive".into());
            (None, None)
        }
        (None, None) => {
            errors.push("one of [model] or [heat] is required".into());
            (None, None)
        }
        (Some(m), None) => {
            let classical = (0.5 * m.sigma * m.sigma, m.r, -m.r);
            let spec = ModelSpec {
                a: m.a.unwrap_or(classical.0),
                b: m.b.unwrap_or(classical.1),
                c: m.c.unwrap_or(classical.2),
                d: m.d.unwrap_or(0.0),
                sigma: m.sigma,
                r: m.r,
                maturity: m.maturity,
                form: m.form.unwrap_or(EquationForm::Source),
            };
            let violations = spec.violations();
            errors.extend(violations.iter().map(|e| format!("model: {e}")));
            let payoff = match &raw.payoff {
                None => {
                    errors.push("payoff: required with [model]".into());
                    None
                }
                Some(pf) => match pf.validate() {
                    Ok(()) => Some(pf.clone()),
                    Err(e) => {
                        errors.push(format!("payoff: {e}"));
                        None
                    }
                },
            };
            if let Some(pf) = &payoff {
                center = match pf {
                    Payoff::Call { strike } | Payoff::Put { strike } => strike.ln(),
                    Payoff::CallSpread { lower, upper } => 0.5 * (lower.ln() + upper.ln()),
                    Payoff::Custom { table } => 0.5 * (table[0].0.ln() + table[table.len() - 1].0.ln()),
                };
            }
            model = Some(spec.clone());
            match (violations.is_empty(), payoff) {
                (true, Some(pf)) => match reduce_to_heat(&spec, &pf, nonlinearity.clone(), p.max(1.0)) {
                    Ok(pb) => {
                        let h = pb.horizon;
                        (Some(pb), Some(h))
                    }
                    Err(e) => {
                        errors.push(format!("model: {e}"));
                        (None, None)
                    }
                },
                _ => (None, spec.a.is_finite().then(|| spec.heat_horizon()).filter(|h| *h > 0.0)),
            }
        }
        (None, Some(h)) => {
            if raw.payoff.is_some() {
                errors.push("payoff: only allowed with [model]".into());
            }
            let initial = match &h.initial {
                RawInitial::Zero => InitialData::Zero,
                RawInitial::Gaussians { bumps } => {
                    if !bumps.is_empty() {
                        center = bumps.iter().map(|b| b.center).sum::<f64>() / bumps.len() as f64;
                    }
                    InitialData::Gaussians(bumps.clone())
                }
            };
            let (drift, reaction) = match h.placement {
                EquationForm::Source => (h.drift.unwrap_or(1.0), h.reaction.unwrap_or(0.0)),
                EquationForm::Flux => (h.drift.unwrap_or(0.0), h.reaction.unwrap_or(1.0)),
            };
            match HeatProblem::new(
                initial,
                drift,
                reaction,
                nonlinearity.clone(),
                h.placement,
                h.coefficient.unwrap_or(1.0),
                p.max(1.0),
                h.horizon,
            ) {
                Ok(pb) => (Some(pb), Some(h.horizon)),
                Err(e) => {
                    errors.push(format!("heat: {e}"));
                    (None, None)
                }
            }
        }
    };

    let tail = raw.grid.tail_epsilon.unwrap_or(DEFAULT_TAIL_EPSILON);
    let n_x = raw.grid.n_x.unwrap_or(DEFAULT_N_X);
    let n_t = raw.grid.n_t.unwrap_or(DEFAULT_N_T);
    let grid = horizon.and_then(|t| {
        let half = if tail > 0.0 && tail < 1.0 {
            tail_half_width(tail, t) + 6.0 * (2.0 * t).sqrt() + 2.0
        } else {
            3.0
        };
        let x_min = raw.grid.x_min.unwrap_or(center - half);
        let x_max = raw.grid.x_max.unwrap_or(center + half);
        match Grid::new(x_min, x_max, n_x, t, n_t, tail) {
            Ok(g) => Some(g),
            Err(e) => {
                errors.push(format!("grid: {e}"));
                None
            }
        }
    });
    if let (Some(pb), Some(g)) = (&problem, &grid) {
        if let Err(e) = pb.initial.sample(g) {
            errors.push(format!("grid: {e}"));
        }
    }

    let defaults = PicardConfig::default();
    let picard = PicardConfig {
        tol: raw.picard.tol.unwrap_or(defaults.tol),
        max_iter: raw.picard.max_iter.unwrap_or(defaults.max_iter),
        safety: raw.picard.safety.unwrap_or(defaults.safety),
        c_env: raw.picard.c_env,
    };
    errors.extend(picard.violations().into_iter().map(|m| format!("picard: {m}")));

    let diagnostics = Diagnostics {
        trials: raw.diagnostics.trials.unwrap_or(DEFAULT_TRIALS),
        lipschitz_pairs: raw.diagnostics.lipschitz_pairs.unwrap_or(DEFAULT_LIPSCHITZ_PAIRS),
    };
    if diagnostics.trials == 0 {
        errors.push("diagnostics.trials: must be >= 1".into());
    }
    if diagnostics.lipschitz_pairs == 0 {
        errors.push("diagnostics.lipschitz_pairs: must be >= 1".into());
    }

    if let Some(spot) = raw.oracle.spot {
        if !(spot > 0.0 && spot.is_finite()) {
            errors.push(format!("oracle.spot: must be > 0, got {spot}"));
        }
        if model.is_none() {
            errors.push("oracle.spot: only meaningful with [model]".into());
        }
    }
    let oracle = grid.as_ref().map(|g| {
        let fd = FdConfig {
            theta: raw.oracle.theta.unwrap_or(0.5),
            n_x: raw.oracle.fd_n_x.unwrap_or(g.n_x()),
            n_t: raw.oracle.fd_n_t.unwrap_or(g.n_t()),
            ..FdConfig::matching(g)
        };
        if let Err(e) = fd.validate() {
            errors.push(format!("oracle: {e}"));
        }
        OracleSettings {
            spot: raw.oracle.spot,
            fd,
        }
    });

    match (errors.is_empty(), problem, grid, oracle) {
        (true, Some(problem), Some(grid), Some(oracle)) => Ok(RunConfig {
            problem,
            payoff: raw.payoff.filter(|_| model.is_some()),
            model,
            grid,
            picard,
            tasks,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            diagnostics,
            oracle,
            config_hash,
        }),
        _ => {
            if errors.is_empty() {
                errors.push("configuration incomplete".into());
            }
            Err(errors)
        }
    }
}
