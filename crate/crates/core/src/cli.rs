//! Configuration and subcommands behind the `tfsh` binary.
//!
//! Settings come from, in increasing precedence: built-in defaults, a
//! `--preset`, a flat `key = value` config file (`--config`, `#` starts a
//! comment) and command-line flags. Every key has a matching flag with
//! underscores replaced by dashes (`tau_max` <-> `--tau-max`).

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::grid::{Field2D, Grid2D};
use crate::io::{fmt_f64, write_field_csv, write_field_pgm};
use crate::kernels::{dcc_row, l1_rows};
use crate::mesh::{graded_mesh, max_step_bound, two_part_mesh, warmup_uniform_mesh, TimeMesh};
use crate::mms::{assemble, run_single, ConvergenceTable, ErrorMeasure, MmsConfig, SpatialForcing};
use crate::nonlinear::NonlinearParams;
use crate::stepper::{run, HistoryMode, Simulation, StepPolicy, StepperOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MONITOR: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Converge,
    Simulate,
    Kernels,
    Mesh,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Converge => "converge",
            Command::Simulate => "simulate",
            Command::Kernels => "kernels",
            Command::Mesh => "mesh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    Graded,
    TwoPart,
    /// Graded warm-up, then equal steps of size `tau`.
    Uniform,
    Adaptive,
}

impl MeshKind {
    fn name(self) -> &'static str {
        match self {
            MeshKind::Graded => "graded",
            MeshKind::TwoPart => "two-part",
            MeshKind::Uniform => "uniform",
            MeshKind::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryKind {
    Direct,
    Soe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialData {
    /// Smooth perturbation of `u = 0.07` used for the pattern runs.
    Example2,
    Zero,
}

/// Initial data of the `example2` preset on `(0, 32)^2`.
pub fn example2_initial(x: f64, y: f64) -> f64 {
    use std::f64::consts::PI;
    0.07 - 0.02 * (2.0 * PI * (x - 12.0) / 32.0).cos() * (2.0 * PI * (y - 1.0) / 32.0).sin()
        + 0.02 * (PI * (x + 10.0) / 32.0).cos().powi(2) * (PI * (y + 3.0) / 32.0).sin().powi(2)
        - 0.01 * (4.0 * PI * x / 32.0).sin().powi(2) * (4.0 * PI * (y - 6.0) / 32.0).sin().powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub alpha: f64,
    pub g: f64,
    pub epsilon: f64,
    pub length: f64,
    pub m: usize,
    pub mesh: MeshKind,
    /// One value except for `converge`, which sweeps the list.
    pub gamma: Vec<f64>,
    /// One value except for `converge`, which sweeps the list.
    pub n: Vec<usize>,
    pub t_end: f64,
    pub seed: u64,
    pub eta: f64,
    pub tau_max: f64,
    pub tau_min: f64,
    pub tau: f64,
    pub warmup_steps: usize,
    pub warmup_gamma: f64,
    pub strict_tau: bool,
    pub strict: bool,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub out: PathBuf,
    pub snapshot_times: Vec<f64>,
    pub formats: Vec<String>,
    pub sigma: f64,
    pub spatial_forcing: SpatialForcing,
    pub error_measure: ErrorMeasure,
    pub jobs: usize,
    pub history: HistoryKind,
    pub soe_tol: f64,
    pub memory_budget_mb: usize,
    pub initial: InitialData,
    pub preset: Option<String>,
    /// Verbatim text of the config file, if one was given.
    pub config_text: Option<String>,
}

/// Keys accepted in config files and as flags.
pub const KEYS: &[&str] = &[
    "alpha",
    "g",
    "epsilon",
    "L",
    "M",
    "mesh",
    "gamma",
    "N",
    "T",
    "seed",
    "eta",
    "tau_max",
    "tau_min",
    "tau",
    "warmup_steps",
    "warmup_gamma",
    "strict_tau",
    "strict",
    "fp_tol",
    "fp_max_iter",
    "out",
    "snapshot_times",
    "formats",
    "sigma",
    "spatial_forcing",
    "jobs",
    "history",
    "soe_tol",
    "memory_budget_mb",
    "initial",
    "error_measure",
];

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let out = std::env::var_os("TFSH_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("tfsh-out"));
        let mut cfg = Self {
            command,
            alpha: 0.5,
            g: 0.1,
            epsilon: 0.5,
            length: 2.0 * std::f64::consts::PI,
            m: 128,
            mesh: MeshKind::TwoPart,
            gamma: vec![4.0],
            n: vec![20, 40, 80, 160],
            t_end: 1.0,
            seed: 2022,
            eta: 10.0,
            tau_max: 0.1,
            tau_min: 1e-3,
            tau: 1e-2,
            warmup_steps: 30,
            warmup_gamma: 3.0,
            strict_tau: false,
            strict: false,
            fp_tol: 1e-12,
            fp_max_iter: 500,
            out,
            snapshot_times: Vec::new(),
            formats: vec!["csv".into(), "pgm".into()],
            sigma: 0.3,
            spatial_forcing: SpatialForcing::Grid,
            error_measure: ErrorMeasure::MaxOverLevels,
            jobs: 1,
            history: HistoryKind::Direct,
            soe_tol: 1e-13,
            memory_budget_mb: 1024,
            initial: InitialData::Zero,
            preset: None,
            config_text: None,
        };
        if command != Command::Converge {
            cfg.n = vec![20];
        }
        if command == Command::Simulate {
            cfg.apply_example2();
        }
        cfg
    }

    fn apply_example2(&mut self) {
        self.alpha = 0.6;
        self.g = 1.0;
        self.epsilon = 0.85;
        self.length = 32.0;
        self.m = 96;
        self.mesh = MeshKind::Adaptive;
        self.t_end = 512.0;
        self.eta = 10.0;
        self.tau_max = 0.1;
        self.tau_min = 1e-3;
        self.snapshot_times = vec![64.0, 128.0, 256.0, 512.0];
        self.history = HistoryKind::Soe;
        self.initial = InitialData::Example2;
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "example1-a05" => {
                self.command_guard(name, Command::Converge)?;
                self.alpha = 0.5;
                self.gamma = vec![4.0, 5.0, 6.0];
            }
            "example1-a08" => {
                self.command_guard(name, Command::Converge)?;
                self.alpha = 0.8;
                self.gamma = vec![3.0, 4.0, 5.0];
            }
            "example2" => self.apply_example2(),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}' (expected example1-a05, example1-a08 or example2)"
                )))
            }
        }
        if matches!(name, "example1-a05" | "example1-a08") {
            self.sigma = 0.3;
            self.g = 0.1;
            self.epsilon = 0.5;
            self.t_end = 1.0;
            self.n = vec![20, 40, 80, 160];
            self.m = 128;
        }
        self.preset = Some(name.to_string());
        Ok(())
    }

    fn command_guard(&self, preset: &str, expected: Command) -> Result<()> {
        if self.command != expected {
            return Err(Error::Config(format!(
                "preset '{preset}' applies to '{}', not '{}'",
                expected.name(),
                self.command.name()
            )));
        }
        Ok(())
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad =
            |what: &str| Error::Config(format!("malformed value for '{key}': '{value}' ({what})"));
        let real = || value.parse::<f64>().map_err(|_| bad("expected a number"));
        let count = || {
            value
                .parse::<usize>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        let flag = || match value {
            "true" | "1" | "yes" | "on" | "" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(bad("expected true or false")),
        };
        let reals = || -> Result<Vec<f64>> {
            if value.is_empty() {
                return Ok(Vec::new());
            }
            value
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| bad("expected comma-separated numbers"))
                })
                .collect()
        };
        match key {
            "alpha" => self.alpha = real()?,
            "g" => self.g = real()?,
            "epsilon" => self.epsilon = real()?,
            "L" => self.length = real()?,
            "M" => self.m = count()?,
            "mesh" => {
                self.mesh = match value {
                    "graded" => MeshKind::Graded,
                    "two-part" => MeshKind::TwoPart,
                    "uniform" => MeshKind::Uniform,
                    "adaptive" => MeshKind::Adaptive,
                    _ => return Err(bad("expected graded, two-part, uniform or adaptive")),
                }
            }
            "gamma" => self.gamma = reals()?,
            "N" => {
                self.n = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| bad("expected comma-separated integers"))
                    })
                    .collect::<Result<_>>()?
            }
            "T" => self.t_end = real()?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| bad("expected a 64-bit unsigned integer"))?
            }
            "eta" => self.eta = real()?,
            "tau_max" => self.tau_max = real()?,
            "tau_min" => self.tau_min = real()?,
            "tau" => self.tau = real()?,
            "warmup_steps" => self.warmup_steps = count()?,
            "warmup_gamma" => self.warmup_gamma = real()?,
            "strict_tau" => self.strict_tau = flag()?,
            "strict" => self.strict = flag()?,
            "fp_tol" => self.fp_tol = real()?,
            "fp_max_iter" => self.fp_max_iter = count()?,
            "out" => self.out = PathBuf::from(value),
            "snapshot_times" => self.snapshot_times = reals()?,
            "formats" => {
                self.formats = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if let Some(f) = self.formats.iter().find(|f| *f != "csv" && *f != "pgm") {
                    return Err(Error::Config(format!(
                        "unknown snapshot format '{f}' (expected csv, pgm)"
                    )));
                }
            }
            "sigma" => self.sigma = real()?,
            "spatial_forcing" => {
                self.spatial_forcing = match value {
                    "grid" => SpatialForcing::Grid,
                    "continuous" => SpatialForcing::Continuous,
                    _ => return Err(bad("expected grid or continuous")),
                }
            }
            "error_measure" => {
                self.error_measure = match value {
                    "max" => ErrorMeasure::MaxOverLevels,
                    "final" => ErrorMeasure::FinalTime,
                    _ => return Err(bad("expected max or final")),
                }
            }
            "jobs" => self.jobs = count()?,
            "history" => {
                self.history = match value {
                    "direct" => HistoryKind::Direct,
                    "soe" => HistoryKind::Soe,
                    _ => return Err(bad("expected direct or soe")),
                }
            }
            "soe_tol" => self.soe_tol = real()?,
            "memory_budget_mb" => self.memory_budget_mb = count()?,
            "initial" => {
                self.initial = match value {
                    "example2" => InitialData::Example2,
                    "zero" => InitialData::Zero,
                    _ => return Err(bad("expected example2 or zero")),
                }
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Resolved settings as `(key, value)` pairs, in [`KEYS`] order. Feeding
    /// them back through [`RunConfig::set`] reproduces the configuration.
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        vec![
            ("alpha", self.alpha.to_string()),
            ("g", self.g.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("L", self.length.to_string()),
            ("M", self.m.to_string()),
            ("mesh", self.mesh.name().to_string()),
            ("gamma", list(&self.gamma)),
            (
                "N",
                self.n
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("T", self.t_end.to_string()),
            ("seed", self.seed.to_string()),
            ("eta", self.eta.to_string()),
            ("tau_max", self.tau_max.to_string()),
            ("tau_min", self.tau_min.to_string()),
            ("tau", self.tau.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("warmup_gamma", self.warmup_gamma.to_string()),
            ("strict_tau", self.strict_tau.to_string()),
            ("strict", self.strict.to_string()),
            ("fp_tol", self.fp_tol.to_string()),
            ("fp_max_iter", self.fp_max_iter.to_string()),
            ("out", self.out.display().to_string()),
            ("snapshot_times", list(&self.snapshot_times)),
            ("formats", self.formats.join(",")),
            ("sigma", self.sigma.to_string()),
            (
                "spatial_forcing",
                match self.spatial_forcing {
                    SpatialForcing::Grid => "grid",
                    SpatialForcing::Continuous => "continuous",
                }
                .to_string(),
            ),
            (
                "error_measure",
                match self.error_measure {
                    ErrorMeasure::MaxOverLevels => "max",
                    ErrorMeasure::FinalTime => "final",
                }
                .to_string(),
            ),
            ("jobs", self.jobs.to_string()),
            (
                "history",
                match self.history {
                    HistoryKind::Direct => "direct",
                    HistoryKind::Soe => "soe",
                }
                .to_string(),
            ),
            ("soe_tol", self.soe_tol.to_string()),
            ("memory_budget_mb", self.memory_budget_mb.to_string()),
            (
                "initial",
                match self.initial {
                    InitialData::Example2 => "example2",
                    InitialData::Zero => "zero",
                }
                .to_string(),
            ),
        ]
    }

    pub fn history_mode(&self) -> HistoryMode {
        match self.history {
            HistoryKind::Direct => HistoryMode::Direct,
            HistoryKind::Soe => HistoryMode::Soe {
                rel_tol: self.soe_tol,
            },
        }
    }

    pub fn params(&self) -> NonlinearParams {
        NonlinearParams {
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            ..NonlinearParams::new(self.g, self.epsilon)
        }
    }

    /// Range checks; messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.g >= 0.0) {
            return fail(format!("g must be >= 0, got {}", self.g));
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return fail(format!("L must be positive, got {}", self.length));
        }
        if self.m < 4 {
            return fail(format!("M must be at least 4, got {}", self.m));
        }
        if self.gamma.is_empty() || self.gamma.iter().any(|&g| !(g >= 1.0 && g.is_finite())) {
            return fail(format!("gamma must be >= 1, got {:?}", self.gamma));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return fail(format!("N must be positive, got {:?}", self.n));
        }
        if self.command != Command::Converge {
            if self.gamma.len() != 1 {
                return fail(format!(
                    "gamma takes a single value for '{}'",
                    self.command.name()
                ));
            }
            if self.n.len() != 1 {
                return fail(format!(
                    "N takes a single value for '{}'",
                    self.command.name()
                ));
            }
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return fail(format!("T must be positive, got {}", self.t_end));
        }
        if !(self.eta >= 0.0) {
            return fail(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(self.tau_min > 0.0 && self.tau_min <= self.tau_max) {
            return fail(format!(
                "tau_min must satisfy 0 < tau_min <= tau_max, got tau_min = {}, tau_max = {}",
                self.tau_min, self.tau_max
            ));
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.warmup_steps == 0 {
            return fail("warmup_steps must be positive".into());
        }
        if !(self.warmup_gamma >= 1.0) {
            return fail(format!(
                "warmup_gamma must be >= 1, got {}",
                self.warmup_gamma
            ));
        }
        if !(self.fp_tol > 0.0) {
            return fail(format!("fp_tol must be positive, got {}", self.fp_tol));
        }
        if self.fp_max_iter == 0 {
            return fail("fp_max_iter must be positive".into());
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.jobs == 0 {
            return fail("jobs must be positive".into());
        }
        if !(self.soe_tol > 0.0) {
            return fail(format!("soe_tol must be positive, got {}", self.soe_tol));
        }
        if let Some(&t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(t > 0.0 && t <= self.t_end))
        {
            return fail(format!(
                "snapshot_times entries must lie in (0, T], got {t}"
            ));
        }
        if self.mesh == MeshKind::Adaptive
            && matches!(self.command, Command::Kernels | Command::Mesh)
        {
            return fail(format!(
                "mesh = adaptive depends on the solution and cannot be used with '{}'; run 'simulate'",
                self.command.name()
            ));
        }
        Ok(())
    }
}

/// Keys that must be given (flag, file or preset) for each subcommand.
fn required_keys(command: Command) -> &'static [&'static str] {
    match command {
        Command::Converge => &["alpha", "sigma", "gamma"],
        Command::Kernels => &["alpha"],
        Command::Simulate | Command::Mesh => &[],
    }
}

/// Parses a flat `key = value` file. Returns pairs in file order.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected 'key = value', got '{}'",
                i + 1,
                raw.trim()
            ))
        })?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key '{k}'", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Debug, Parser)]
#[command(
    name = "tfsh",
    version,
    about = "Variable-step L1 solver for the time-fractional Swift-Hohenberg equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Manufactured-solution convergence study; writes errors.csv.
    Converge(Flags),
    /// Pattern-formation run; writes energy.csv and snapshots.
    Simulate(Flags),
    /// Dumps L1 and DCC kernel rows as kernels.csv.
    Kernels(Flags),
    /// Dumps a time mesh as mesh.csv.
    Mesh(Flags),
}

#[derive(Debug, Args, Default)]
struct Flags {
    /// Flat key = value file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// example1-a05, example1-a08 or example2.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    g: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    epsilon: Option<String>,
    /// Side length of the periodic square.
    #[arg(long = "L", allow_hyphen_values = true)]
    length: Option<String>,
    /// Grid points per direction.
    #[arg(long = "M")]
    m: Option<String>,
    /// graded, two-part, uniform or adaptive.
    #[arg(long)]
    mesh: Option<String>,
    /// Grading parameter; comma list for converge.
    #[arg(long)]
    gamma: Option<String>,
    /// Interval count; comma list for converge.
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long = "T")]
    t_end: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    tau_max: Option<String>,
    #[arg(long)]
    tau_min: Option<String>,
    /// Step of the uniform part of a uniform mesh.
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    warmup_steps: Option<String>,
    #[arg(long)]
    warmup_gamma: Option<String>,
    /// Reject steps above the solvability bound.
    #[arg(long)]
    strict_tau: bool,
    /// Turn energy-monitor warnings into errors (exit code 2).
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    fp_tol: Option<String>,
    #[arg(long)]
    fp_max_iter: Option<String>,
    /// Output directory (default: $TFSH_OUT_DIR or ./tfsh-out).
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    snapshot_times: Option<String>,
    /// Snapshot formats: comma list of csv and pgm.
    #[arg(long)]
    formats: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// grid or continuous.
    #[arg(long)]
    spatial_forcing: Option<String>,
    /// max (over all time levels) or final (final time only).
    #[arg(long)]
    error_measure: Option<String>,
    /// Worker threads for converge.
    #[arg(long)]
    jobs: Option<String>,
    /// direct or soe.
    #[arg(long)]
    history: Option<String>,
    #[arg(long)]
    soe_tol: Option<String>,
    #[arg(long)]
    memory_budget_mb: Option<String>,
    /// example2 or zero.
    #[arg(long)]
    initial: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let opts: [(&'static str, &Option<String>); 30] = [
            ("alpha", &self.alpha),
            ("g", &self.g),
            ("epsilon", &self.epsilon),
            ("L", &self.length),
            ("M", &self.m),
            ("mesh", &self.mesh),
            ("gamma", &self.gamma),
            ("N", &self.n),
            ("T", &self.t_end),
            ("seed", &self.seed),
            ("eta", &self.eta),
            ("tau_max", &self.tau_max),
            ("tau_min", &self.tau_min),
            ("tau", &self.tau),
            ("warmup_steps", &self.warmup_steps),
            ("warmup_gamma", &self.warmup_gamma),
            ("fp_tol", &self.fp_tol),
            ("fp_max_iter", &self.fp_max_iter),
            ("out", &self.out),
            ("snapshot_times", &self.snapshot_times),
            ("formats", &self.formats),
            ("sigma", &self.sigma),
            ("spatial_forcing", &self.spatial_forcing),
            ("error_measure", &self.error_measure),
            ("jobs", &self.jobs),
            ("history", &self.history),
            ("soe_tol", &self.soe_tol),
            ("memory_budget_mb", &self.memory_budget_mb),
            ("initial", &self.initial),
            ("strict_tau", &None),
        ];
        let mut out: Vec<_> = opts
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (*k, v.clone())))
            .collect();
        if self.strict_tau {
            out.push(("strict_tau", "true".into()));
        }
        if self.strict {
            out.push(("strict", "true".into()));
        }
        out
    }
}

/// Builds the configuration from command-line arguments (program name
/// first). Precedence: defaults < preset < config file < flags.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let (command, flags) = match cli.command {
        Sub::Converge(f) => (Command::Converge, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Kernels(f) => (Command::Kernels, f),
        Sub::Mesh(f) => (Command::Mesh, f),
    };
    let text = match &flags.config {
        Some(path) => Some(fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config file '{}': {e}", path.display()))
        })?),
        None => None,
    };
    resolve(
        command,
        flags.preset.as_deref(),
        text.as_deref(),
        &flags.pairs(),
    )
}

/// Applies preset, file text and flag pairs on top of the defaults.
pub fn resolve(
    command: Command,
    preset: Option<&str>,
    file_text: Option<&str>,
    flags: &[(&str, String)],
) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(command);
    let mut given: Vec<String> = Vec::new();
    if let Some(p) = preset {
        cfg.apply_preset(p)?;
        given.extend(required_keys(command).iter().map(|k| k.to_string()));
    }
    if let Some(text) = file_text {
        for (k, v) in parse_config_text(text)? {
            cfg.set(&k, &v)?;
            given.push(k);
        }
        cfg.config_text = Some(text.to_string());
    }
    for (k, v) in flags {
        cfg.set(k, v)?;
        given.push(k.to_string());
    }
    if let Some(missing) = required_keys(command)
        .iter()
        .find(|k| !given.iter().any(|g| g == *k))
    {
        return Err(Error::Config(format!(
            "missing required key '{missing}' for '{}' (set it with --{} or in the config file)",
            command.name(),
            missing.replace('_', "-")
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Monitor(_) => EXIT_MONITOR,
        _ => EXIT_FAILURE,
    }
}

/// Runs the configured subcommand and returns the process exit code.
pub fn dispatch(cfg: &RunConfig) -> i32 {
    match execute(cfg) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("tfsh {}: {e}", cfg.command.name());
            exit_code(&e)
        }
    }
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match Cli::try_parse_from(&args) {
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return EXIT_OK;
        }
        Err(e) => {
            let _ = e.print();
            return EXIT_FAILURE;
        }
        Ok(_) => {}
    }
    match parse_config(args) {
        Ok(cfg) => dispatch(&cfg),
        Err(e) => {
            eprintln!("tfsh: {e}");
            EXIT_FAILURE
        }
    }
}

/// Runs the subcommand, writing its artifacts; returns a one-line summary.
pub fn execute(cfg: &RunConfig) -> Result<String> {
    let start = Instant::now();
    fs::create_dir_all(&cfg.out)?;
    let (summary, extra) = match cfg.command {
        Command::Converge => run_converge(cfg)?,
        Command::Simulate => run_simulate(cfg)?,
        Command::Kernels => run_kernels(cfg)?,
        Command::Mesh => run_mesh(cfg)?,
    };
    write_meta(cfg, &extra, start.elapsed().as_secs_f64())?;
    Ok(summary)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Non-adaptive mesh described by the config.
pub fn build_mesh(cfg: &RunConfig) -> Result<TimeMesh> {
    let gamma = cfg.gamma[0];
    let n = cfg.n[0];
    match cfg.mesh {
        MeshKind::Graded => graded_mesh(cfg.t_end, n, gamma),
        MeshKind::TwoPart => two_part_mesh(cfg.t_end, n, gamma, cfg.seed),
        MeshKind::Uniform => {
            warmup_uniform_mesh(cfg.t_end, cfg.warmup_steps, cfg.warmup_gamma, cfg.tau)
        }
        MeshKind::Adaptive => Err(Error::Config(
            "adaptive meshes are built during 'simulate'".into(),
        )),
    }
}

fn run_kernels(cfg: &RunConfig) -> Result<(String, Vec<(String, String)>)> {
    let mesh = build_mesh(cfg)?;
    let rows = l1_rows(&mesh, mesh.len(), cfg.alpha)?;
    let mut out = create(&cfg.out, "kernels.csv")?;
    writeln!(out, "n,k,a,p")?;
    for n in 1..=rows.len() {
        let p = dcc_row(&rows[..n])?;
        for k in 1..=n {
            writeln!(
                out,
                "{n},{k},{},{}",
                fmt_f64(rows[n - 1].a(n - k)),
                fmt_f64(p.p(n - k))
            )?;
        }
    }
    out.flush()?;
    Ok((
        format!(
            "wrote {} kernel rows to {}",
            rows.len(),
            cfg.out.join("kernels.csv").display()
        ),
        Vec::new(),
    ))
}

fn run_mesh(cfg: &RunConfig) -> Result<(String, Vec<(String, String)>)> {
    let mesh = build_mesh(cfg)?;
    let tau_star = max_step_bound(cfg.alpha, cfg.g, cfg.epsilon)?;
    let mut out = create(&cfg.out, "mesh.csv")?;
    mesh.write_csv(&mut out)?;
    out.flush()?;
    let extra = vec![
        ("levels".to_string(), mesh.len().to_string()),
        ("tau_max_mesh".to_string(), fmt_f64(mesh.tau_max())),
        ("r_star".to_string(), fmt_f64(mesh.r_star())),
        ("tau_star".to_string(), fmt_f64(tau_star)),
    ];
    Ok((
        format!(
            "wrote {} steps to {}",
            mesh.len(),
            cfg.out.join("mesh.csv").display()
        ),
        extra,
    ))
}

fn mms_config(cfg: &RunConfig, gamma: f64) -> MmsConfig {
    MmsConfig {
        n_list: cfg.n.clone(),
        m: cfg.m,
        g: cfg.g,
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        t_end: cfg.t_end,
        spatial: cfg.spatial_forcing,
        measure: cfg.error_measure,
        fp_tol: cfg.fp_tol,
        fp_max_iter: cfg.fp_max_iter,
        ..MmsConfig::new(cfg.alpha, cfg.sigma, gamma)
    }
}

fn run_converge(cfg: &RunConfig) -> Result<(String, Vec<(String, String)>)> {
    let mut tables: Vec<ConvergenceTable> = Vec::new();
    for &gamma in &cfg.gamma {
        let mms = mms_config(cfg, gamma);
        mms.validate()?;
        let rows = run_jobs(&mms, cfg.jobs)?;
        tables.push(assemble(&mms, rows));
    }
    let mut out = create(&cfg.out, "errors.csv")?;
    for (i, t) in tables.iter().enumerate() {
        t.write_csv(&mut out, i == 0)?;
    }
    out.flush()?;
    let mut summary = String::new();
    let mut extra = Vec::new();
    for t in &tables {
        let last = t
            .last_order()
            .map(|o| format!("{o:.3}"))
            .unwrap_or_else(|| "-".into());
        summary.push_str(&format!(
            "alpha={} sigma={} gamma={}: last-pair order {last}, predicted {:.3}\n",
            t.alpha,
            t.sigma,
            t.gamma,
            t.predicted_order()
        ));
        extra.push((format!("order_gamma_{}", t.gamma), last));
    }
    summary.push_str(&format!("wrote {}", cfg.out.join("errors.csv").display()));
    Ok((summary, extra))
}

/// Runs every interval count of `mms` on up to `jobs` threads.
fn run_jobs(mms: &MmsConfig, jobs: usize) -> Result<Vec<crate::mms::ConvergenceRow>> {
    let work = &mms.n_list;
    let workers = jobs.min(work.len()).max(1);
    if workers == 1 {
        return work.iter().map(|&n| run_single(mms, n)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<Result<Vec<(usize, crate::mms::ConvergenceRow)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= work.len() {
                            return Ok(mine);
                        }
                        mine.push((i, run_single(mms, work[i])?));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(work.len());
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Initial field of a `simulate` run.
pub fn initial_field(cfg: &RunConfig) -> Result<Field2D> {
    let grid = Grid2D::new(cfg.length, cfg.m)?;
    Ok(match cfg.initial {
        InitialData::Example2 => Field2D::from_fn(grid, example2_initial),
        InitialData::Zero => Field2D::zeros(grid),
    })
}

/// The simulation described by a `simulate` config.
pub fn build_simulation(cfg: &RunConfig) -> Result<Simulation> {
    let u0 = initial_field(cfg)?;
    let policy = match cfg.mesh {
        MeshKind::Adaptive => {
            let t_split = (1.0 / cfg.warmup_gamma).min(cfg.t_end);
            let warmup = graded_mesh(t_split, cfg.warmup_steps, cfg.warmup_gamma)?;
            if t_split < cfg.t_end {
                StepPolicy::Adaptive {
                    warmup,
                    t_end: cfg.t_end,
                    eta: cfg.eta,
                    tau_max: cfg.tau_max,
                    tau_min: cfg.tau_min,
                }
            } else {
                StepPolicy::Mesh(warmup)
            }
        }
        _ => StepPolicy::Mesh(build_mesh(cfg)?),
    };
    Ok(Simulation {
        u0,
        alpha: cfg.alpha,
        params: cfg.params(),
        policy,
        options: StepperOptions {
            history: cfg.history_mode(),
            strict: cfg.strict,
            strict_tau: cfg.strict_tau,
            memory_budget: cfg.memory_budget_mb.saturating_mul(1 << 20),
            monitors: true,
        },
        snapshot_times: cfg.snapshot_times.clone(),
        forcing: None,
    })
}

/// File stem of a snapshot taken for requested time `t`.
pub fn snapshot_stem(t: f64) -> String {
    format!("u_t{t}")
}

fn run_simulate(cfg: &RunConfig) -> Result<(String, Vec<(String, String)>)> {
    let out = run(build_simulation(cfg)?)?;
    let mut f = create(&cfg.out, "energy.csv")?;
    out.write_energy_csv(&mut f)?;
    f.flush()?;
    for s in &out.snapshots {
        let stem = snapshot_stem(s.requested);
        if cfg.formats.iter().any(|f| f == "csv") {
            let mut w = create(&cfg.out, &format!("{stem}.csv"))?;
            write_field_csv(&s.field, &mut w)?;
            w.flush()?;
        }
        if cfg.formats.iter().any(|f| f == "pgm") {
            let mut w = create(&cfg.out, &format!("{stem}.pgm"))?;
            write_field_pgm(&s.field, &mut w)?;
            w.flush()?;
        }
    }
    let last = out.final_record();
    let extra = vec![
        ("tau_star".to_string(), fmt_f64(out.tau_star)),
        ("levels".to_string(), out.levels().to_string()),
        ("final_t".to_string(), fmt_f64(last.t)),
        ("final_energy".to_string(), fmt_f64(last.energy)),
        (
            "final_modified_energy".to_string(),
            fmt_f64(last.modified_energy),
        ),
        ("monitor_warnings".to_string(), out.events.len().to_string()),
    ];
    Ok((
        format!(
            "{} levels to t = {}, E = {:.10e}, E_mod = {:.10e}, {} monitor warning(s); output in {}",
            out.levels(),
            last.t,
            last.energy,
            last.modified_energy,
            out.events.len(),
            cfg.out.display()
        ),
        extra,
    ))
}

/// Writes `run.meta`: the resolved configuration as a valid config file,
/// followed by run facts and the original config file as comments.
fn write_meta(cfg: &RunConfig, extra: &[(String, String)], wall: f64) -> Result<()> {
    let mut w = create(&cfg.out, "run.meta")?;
    writeln!(
        w,
        "# tfsh run metadata; replay with: tfsh {} --config run.meta",
        cfg.command.name()
    )?;
    writeln!(w, "# command = {}", cfg.command.name())?;
    if let Some(p) = &cfg.preset {
        writeln!(w, "# preset = {p}")?;
    }
    for (k, v) in cfg.key_values() {
        writeln!(w, "{k} = {v}")?;
    }
    writeln!(w, "# seed = {}", cfg.seed)?;
    if !extra.iter().any(|(k, _)| k == "tau_star") {
        if let Ok(ts) = max_step_bound(cfg.alpha, cfg.g, cfg.epsilon) {
            writeln!(w, "# tau_star = {}", fmt_f64(ts))?;
        }
    }
    for (k, v) in extra {
        writeln!(w, "# {k} = {v}")?;
    }
    writeln!(w, "# wall_time_s = {wall:.3}")?;
    if let Some(text) = &cfg.config_text {
        writeln!(w, "# --- config file ---")?;
        for line in text.lines() {
            writeln!(w, "# | {line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(list: &[(&'static str, &str)]) -> Vec<(&'static str, String)> {
        list.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn file_used_as_is() {
        let text = "alpha = 0.8\nsigma = 0.3 # comment\n# full comment\ngamma = 3\nN = 20,40\n";
        let cfg = resolve(Command::Converge, None, Some(text), &[]).unwrap();
        assert_eq!(cfg.alpha, 0.8);
        assert_eq!(cfg.gamma, vec![3.0]);
        assert_eq!(cfg.n, vec![20, 40]);
        assert_eq!(cfg.config_text.as_deref(), Some(text));
    }

    #[test]
    fn flags_override_file() {
        let cfg = resolve(
            Command::Kernels,
            None,
            Some("alpha = 0.8\n"),
            &flags(&[("alpha", "0.6")]),
        )
        .unwrap();
        assert_eq!(cfg.alpha, 0.6);
    }

    #[test]
    fn alpha_range_message() {
        let err = resolve(Command::Kernels, None, None, &flags(&[("alpha", "1.5")])).unwrap_err();
        assert!(err.to_string().contains("alpha must lie in (0,1)"), "{err}");
    }

    #[test]
    fn errors_name_the_token() {
        let e = resolve(Command::Kernels, None, Some("alpah = 0.5\n"), &[]).unwrap_err();
        assert!(e.to_string().contains("alpah"));
        let e = resolve(Command::Kernels, None, None, &flags(&[("alpha", "x0.5")])).unwrap_err();
        assert!(e.to_string().contains("x0.5") && e.to_string().contains("alpha"));
        let e = resolve(
            Command::Converge,
            None,
            None,
            &flags(&[("alpha", "0.5"), ("gamma", "4")]),
        )
        .unwrap_err();
        assert!(e.to_string().contains("sigma"), "{e}");
        let e = resolve(Command::Kernels, None, Some("alpha 0.5\n"), &[]).unwrap_err();
        assert!(e.to_string().contains("alpha 0.5"));
    }

    #[test]
    fn presets_fill_required_keys() {
        let cfg = resolve(Command::Converge, Some("example1-a08"), None, &[]).unwrap();
        assert_eq!(cfg.alpha, 0.8);
        assert_eq!(cfg.gamma, vec![3.0, 4.0, 5.0]);
        let cfg = resolve(Command::Simulate, Some("example2"), None, &[]).unwrap();
        assert_eq!((cfg.length, cfg.m, cfg.epsilon), (32.0, 96, 0.85));
        assert_eq!(cfg.initial, InitialData::Example2);
        assert!(resolve(Command::Kernels, Some("example1-a05"), None, &[]).is_err());
        assert!(resolve(Command::Simulate, Some("nope"), None, &[]).is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let cfg = resolve(
            Command::Simulate,
            None,
            None,
            &flags(&[
                ("T", "2.5"),
                ("snapshot_times", "1,2.5"),
                ("alpha", "0.3"),
                ("strict", "true"),
            ]),
        )
        .unwrap();
        let text: String = cfg
            .key_values()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let back = resolve(Command::Simulate, None, Some(&text), &[]).unwrap();
        assert_eq!(
            RunConfig {
                config_text: None,
                ..back
            },
            cfg
        );
    }

    #[test]
    fn clap_flags_reach_the_config() {
        let cfg = parse_config([
            "tfsh",
            "kernels",
            "--alpha",
            "0.5",
            "--mesh",
            "graded",
            "--gamma",
            "2",
            "--N",
            "8",
            "--T",
            "1",
            "--strict-tau",
        ])
        .unwrap();
        assert_eq!(cfg.command, Command::Kernels);
        assert_eq!(cfg.mesh, MeshKind::Graded);
        assert_eq!(cfg.n, vec![8]);
        assert!(cfg.strict_tau && !cfg.strict);
    }

    #[test]
    fn single_values_enforced() {
        let e = resolve(Command::Mesh, None, None, &flags(&[("N", "10,20")])).unwrap_err();
        assert!(e.to_string().contains('N'));
        let e = resolve(Command::Mesh, None, None, &flags(&[("mesh", "adaptive")])).unwrap_err();
        assert!(e.to_string().contains("adaptive"));
    }

    #[test]
    fn example2_initial_range() {
        let g = Grid2D::new(32.0, 96).unwrap();
        let u = Field2D::from_fn(g, example2_initial);
        assert!(u.min() > 0.0 && u.max() < 0.15);
        assert!(
            (example2_initial(0.0, 0.0)
                - (0.07
                    - 0.02
                        * (-2.0 * std::f64::consts::PI * 12.0 / 32.0).cos()
                        * (-2.0 * std::f64::consts::PI / 32.0).sin()
                    + 0.02
                        * (std::f64::consts::PI * 10.0 / 32.0).cos().powi(2)
                        * (3.0 * std::f64::consts::PI / 32.0).sin().powi(2)))
            .abs()
                < 1e-15
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Monitor("x".into())), EXIT_MONITOR);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), EXIT_FAILURE);
    }
}
