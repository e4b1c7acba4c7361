//! Manufactured-solution convergence studies on `(0, 2 pi)^2`, `T = 1`.
//!
//! Exact solution `u = t^sigma / Gamma(1 + sigma) sin x sin y`, with the
//! matching source `g = D^alpha u + (1 + Lap)^2 u + f(u)`; errors are taken
//! in the discrete L2 norm at the final time on two-part meshes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{norm_l2, Field2D, Grid2D};
use crate::kernels::gamma;
use crate::mesh::{max_step_bound, two_part_mesh};
use crate::nonlinear::NonlinearParams;
use crate::stepper::{Forcing, HistoryMode, SolverState, StepperOptions};

/// How `(1 + Lap)^2` acts on the exact solution inside the source term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialForcing {
    /// Continuous operator: `(1 + Lap)^2 (sin x sin y) = sin x sin y`. The
    /// discrete solution then carries the `O(h^2)` spatial error.
    Continuous,
    /// Five-point operator on the sampled solution: `(1 + lambda_h)^2` with
    /// `lambda_h = -(8/h^2) sin^2(h/2)`. Removes the spatial error so only
    /// the time discretization is measured.
    Grid,
}

/// Which error enters `e(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMeasure {
    /// `||U^N - u^N||` at the final time.
    FinalTime,
    /// `max_n ||U^n - u^n||` over all time levels.
    MaxOverLevels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsConfig {
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub n_list: Vec<usize>,
    pub m: usize,
    pub g: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub t_end: f64,
    pub spatial: SpatialForcing,
    pub measure: ErrorMeasure,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl MmsConfig {
    /// Temporal-accuracy setup: `g = 0.1`, `eps = 0.5`, `T = 1`.
    pub fn new(alpha: f64, sigma: f64, gamma: f64) -> Self {
        Self {
            alpha,
            sigma,
            gamma,
            n_list: vec![20, 40, 80, 160],
            m: 128,
            g: 0.1,
            epsilon: 0.5,
            seed: 2022,
            t_end: 1.0,
            spatial: SpatialForcing::Grid,
            measure: ErrorMeasure::MaxOverLevels,
            fp_tol: 1e-12,
            fp_max_iter: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.n_list.is_empty() {
            return Err(Error::InvalidParameter("N list is empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!(
                "N list must be strictly increasing: {:?}",
                self.n_list
            )));
        }
        if self.n_list.windows(2).any(|w| w[1] != 2 * w[0]) {
            log::warn!("N list {:?} is not a doubling sequence", self.n_list);
        }
        Ok(())
    }

    fn params(&self) -> NonlinearParams {
        NonlinearParams {
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            ..NonlinearParams::new(self.g, self.epsilon)
        }
    }
}

/// `t^sigma / Gamma(1 + sigma) sin x sin y`.
pub fn exact_solution(x: f64, y: f64, t: f64, sigma: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    t.powf(sigma) / gamma(1.0 + sigma) * x.sin() * y.sin()
}

/// Source term for the continuous operator.
pub fn forcing(x: f64, y: f64, t: f64, cfg: &MmsConfig) -> f64 {
    forcing_with(x, y, t, cfg, 1.0)
}

fn forcing_with(x: f64, y: f64, t: f64, cfg: &MmsConfig, sh_factor: f64) -> f64 {
    let s = exact_solution(x, y, t, cfg.sigma);
    let caputo =
        t.powf(cfg.sigma - cfg.alpha) / gamma(1.0 + cfg.sigma - cfg.alpha) * x.sin() * y.sin();
    caputo + sh_factor * s + s * (s * (s - cfg.g) - cfg.epsilon)
}

struct MmsForcing {
    cfg: MmsConfig,
    sh_factor: f64,
}

impl MmsForcing {
    fn new(cfg: &MmsConfig, grid: Grid2D) -> Self {
        let sh_factor = match cfg.spatial {
            SpatialForcing::Continuous => 1.0,
            SpatialForcing::Grid => {
                let lam = grid.lap_eigenvalue(1, 1) * (grid.length() / (2.0 * PI)).powi(2);
                (1.0 + lam).powi(2)
            }
        };
        Self {
            cfg: cfg.clone(),
            sh_factor,
        }
    }
}

impl Forcing for MmsForcing {
    fn eval(&self, grid: Grid2D, t: f64) -> Field2D {
        Field2D::from_fn(grid, |x, y| {
            forcing_with(x, y, t, &self.cfg, self.sh_factor)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub tau_max: f64,
    /// `e(N)` under the configured measure.
    pub error: f64,
    pub error_final: f64,
    pub error_max: f64,
    /// Level where `error_max` is attained.
    pub worst_level: usize,
    /// Order against the previous row; `None` for the first.
    pub order: Option<f64>,
    pub max_fp_iters: usize,
    pub tau_star_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub seed: u64,
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log e` against `log tau` over all rows.
    pub order_lsq: Option<f64>,
}

impl ConvergenceTable {
    /// Order from the last consecutive pair.
    pub fn last_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.order)
    }

    /// `min{gamma sigma, 2 - alpha}`.
    pub fn predicted_order(&self) -> f64 {
        (self.gamma * self.sigma).min(2.0 - self.alpha)
    }

    pub const CSV_HEADER: &'static str =
        "alpha,sigma,gamma,N,tau_max,e_N,order_pairwise,order_lsq,seed";

    pub fn write_csv<W: std::io::Write>(&self, mut out: W, header: bool) -> Result<()> {
        use crate::io::fmt_f64;
        if header {
            writeln!(out, "{}", Self::CSV_HEADER)?;
        }
        let lsq = self.order_lsq.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                fmt_f64(self.alpha),
                fmt_f64(self.sigma),
                fmt_f64(self.gamma),
                r.n,
                fmt_f64(r.tau_max),
                fmt_f64(r.error),
                r.order.map(fmt_f64).unwrap_or_default(),
                lsq,
                self.seed
            )?;
        }
        Ok(())
    }
}

/// Observed order `log(e1/e2) / log(tau1/tau2)`.
pub fn observed_order(e1: f64, e2: f64, tau1: f64, tau2: f64) -> f64 {
    (e1 / e2).ln() / (tau1 / tau2).ln()
}

/// Least-squares slope through `(log tau, log e)`.
pub fn lsq_order(taus: &[f64], errors: &[f64]) -> Option<f64> {
    if taus.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Errors for one interval count.
pub fn run_single(cfg: &MmsConfig, intervals: usize) -> Result<ConvergenceRow> {
    let grid = Grid2D::new(2.0 * PI, cfg.m)?;
    let mesh = two_part_mesh(cfg.t_end, intervals, cfg.gamma, cfg.seed)?;
    let tau_max = mesh.tau_max();
    let tau_star = max_step_bound(cfg.alpha, cfg.g, cfg.epsilon)?;
    let options = StepperOptions {
        history: HistoryMode::Direct,
        monitors: false,
        ..StepperOptions::default()
    };
    let bytes = mesh.len().saturating_mul(grid.len() * 8);
    if bytes > options.memory_budget {
        return Err(Error::MemoryBudget(format!(
            "direct history for {} levels on {}^2 points needs {bytes} bytes",
            mesh.len(),
            cfg.m
        )));
    }
    let forcing = MmsForcing::new(cfg, grid);
    let mut state = SolverState::new(Field2D::zeros(grid), cfg.alpha, cfg.params(), options, None)?;
    let shape = Field2D::from_fn(grid, |x, y| x.sin() * y.sin());
    let amp = |t: f64| t.powf(cfg.sigma) / gamma(1.0 + cfg.sigma);
    let (mut error_max, mut worst_level, mut error_final) = (0.0f64, 0, 0.0);
    let mut max_fp_iters = 0;
    for k in 1..=mesh.len() {
        let rec = state.advance_to(mesh.t(k), Some(&forcing))?;
        max_fp_iters = max_fp_iters.max(rec.fp_iters);
        let mut diff = state.solution().clone();
        diff.axpy(-amp(mesh.t(k)), &shape)?;
        error_final = norm_l2(&diff);
        if error_final > error_max {
            error_max = error_final;
            worst_level = k;
        }
    }
    let error = match cfg.measure {
        ErrorMeasure::FinalTime => error_final,
        ErrorMeasure::MaxOverLevels => error_max,
    };
    Ok(ConvergenceRow {
        n: intervals,
        tau_max,
        error,
        error_final,
        error_max,
        worst_level,
        order: None,
        max_fp_iters,
        tau_star_ok: tau_max <= tau_star,
    })
}

pub fn run_convergence(cfg: &MmsConfig) -> Result<ConvergenceTable> {
    cfg.validate()?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let mut row = run_single(cfg, n)?;
        if let Some(prev) = rows.last() {
            row.order = Some(observed_order(
                prev.error,
                row.error,
                prev.tau_max,
                row.tau_max,
            ));
        }
        rows.push(row);
    }
    Ok(assemble(cfg, rows))
}

/// Builds the table from rows computed elsewhere (e.g. in parallel jobs).
pub fn assemble(cfg: &MmsConfig, mut rows: Vec<ConvergenceRow>) -> ConvergenceTable {
    rows.sort_by_key(|r| r.n);
    for i in 1..rows.len() {
        let (a, b) = (&rows[i - 1], &rows[i]);
        rows[i].order = Some(observed_order(a.error, b.error, a.tau_max, b.tau_max));
    }
    let taus: Vec<f64> = rows.iter().map(|r| r.tau_max).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.error).collect();
    ConvergenceTable {
        alpha: cfg.alpha,
        sigma: cfg.sigma,
        gamma: cfg.gamma,
        seed: cfg.seed,
        order_lsq: lsq_order(&taus, &errs),
        rows,
    }
}
