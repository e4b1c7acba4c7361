//! Time loop for the variable-step L1 scheme, with energy bookkeeping.
//!
//! Each level `n` solves `D_tau^alpha u^n = -mu^n`,
//! `mu^n = (I + Lap_h)^2 u^n + f(u^n)` (plus an optional source), then
//! records the discrete energy `E[u^n]` and the modified energy
//! `E[u^n] + 1/2 sum_j p_{n-j}^{(n)} ||mu^j||^2`.

use crate::error::{Error, Result};
use crate::grid::{
    inner, norm_l2, norm_l2_sq, norm_linf, shifted_laplacian, Field2D, Grid2D, SpectralSolver,
};
use crate::kernels::soe::{SoeHistory, SoeKernel};
use crate::kernels::{l1_row_nodes, DccAccumulator, DccKernelRow, L1KernelRow};
use crate::mesh::{adaptive_next_step, check_step_restriction, max_step_bound, TimeMesh};
use crate::nonlinear::{history_rhs, implicit_step, NonlinearParams};

/// Relative slack allowed in the dissipation and energy-bound monitors.
pub const DISSIPATION_REL_TOL: f64 = 1e-8;

/// Discrete energy
/// `1/2 ||(I + Lap_h) v||^2 + 1/4 ||v||_4^4 - g/3 <v^2, v> - eps/2 ||v||^2`.
pub fn energy(v: &Field2D, params: &NonlinearParams) -> f64 {
    let w = shifted_laplacian(v);
    energy_with(v, &w, params)
}

fn energy_with(v: &Field2D, shifted: &Field2D, params: &NonlinearParams) -> f64 {
    let h = v.grid().h();
    let bulk: f64 = v.values().iter().map(|&u| params.potential(u)).sum();
    0.5 * norm_l2_sq(shifted) + h * h * bulk
}

/// `mu = (I + Lap_h)^2 v + f(v)` by direct operator application.
pub fn chemical_potential(v: &Field2D, params: &NonlinearParams) -> Field2D {
    energy_and_potential(v, params).1
}

/// `(E[v], mu(v))` sharing the `(I + Lap_h) v` evaluation.
pub fn energy_and_potential(v: &Field2D, params: &NonlinearParams) -> (f64, Field2D) {
    let w = shifted_laplacian(v);
    let e = energy_with(v, &w, params);
    let mut mu = shifted_laplacian(&w);
    for (m, &u) in mu.values_mut().iter_mut().zip(v.values()) {
        *m += params.f(u);
    }
    (e, mu)
}

/// `E[u^n] + 1/2 sum_{j=1}^{n} p_{n-j}^{(n)} ||mu^j||^2` from an explicit DCC
/// row; `mu_norm_sq[j - 1]` holds `||mu^j||^2`. With `dcc = None` this is
/// `E[u^0]`.
pub fn modified_energy(
    energy_n: f64,
    dcc: Option<&DccKernelRow>,
    mu_norm_sq: &[f64],
) -> Result<f64> {
    match dcc {
        None => Ok(energy_n),
        Some(row) => {
            if mu_norm_sq.len() < row.n {
                return Err(Error::MissingHistory(format!(
                    "modified energy at level {} needs {} potential norms, have {}",
                    row.n,
                    row.n,
                    mu_norm_sq.len()
                )));
            }
            let s: f64 = (1..=row.n)
                .map(|j| row.at_level(j) * mu_norm_sq[j - 1])
                .sum();
            Ok(energy_n + 0.5 * s)
        }
    }
}

/// Source term `g(x, t)` added to the right-hand side at `t_n`.
pub trait Forcing {
    fn eval(&self, grid: Grid2D, t: f64) -> Field2D;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HistoryMode {
    /// Direct L1 convolution over stored differences.
    Direct,
    /// Sum-of-exponentials recurrence with the given relative kernel accuracy.
    Soe { rel_tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepPolicy {
    Mesh(TimeMesh),
    /// Pre-built warm-up mesh followed by adaptive steps up to `t_end`.
    Adaptive {
        warmup: TimeMesh,
        t_end: f64,
        eta: f64,
        tau_max: f64,
        tau_min: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRecord {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub energy: f64,
    pub modified_energy: f64,
    pub mu_norm_sq: f64,
    pub fp_iters: usize,
    pub u_linf: f64,
}

impl EnergyRecord {
    pub const CSV_HEADER: &'static str = "n,t,tau,E,E_mod,mu_norm_sq,fp_iters,u_linf";

    pub fn csv_line(&self) -> String {
        use crate::io::fmt_f64;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n,
            fmt_f64(self.t),
            fmt_f64(self.tau),
            fmt_f64(self.energy),
            fmt_f64(self.modified_energy),
            fmt_f64(self.mu_norm_sq),
            self.fp_iters,
            fmt_f64(self.u_linf)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorEvent {
    /// Modified energy rose beyond tolerance at level `n`.
    Dissipation {
        n: usize,
        previous: f64,
        current: f64,
    },
    /// `E[u^n] <= E_mod[u^n] <= E[u^0]` failed at level `n`.
    EnergyBound {
        n: usize,
        energy: f64,
        modified: f64,
        initial: f64,
    },
}

impl std::fmt::Display for MonitorEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MonitorEvent::Dissipation { n, previous, current } => write!(
                f,
                "modified energy increased at level {n}: {previous:.17e} -> {current:.17e}"
            ),
            MonitorEvent::EnergyBound { n, energy, modified, initial } => write!(
                f,
                "energy bound violated at level {n}: E = {energy:.17e}, E_mod = {modified:.17e}, E0 = {initial:.17e}"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepperOptions {
    pub history: HistoryMode,
    /// Monitor violations become errors.
    pub strict: bool,
    /// Steps above the solvability bound become errors.
    pub strict_tau: bool,
    /// Cap on stored difference fields in direct mode, in bytes.
    pub memory_budget: usize,
    /// Check dissipation and the initial-energy bound (off with forcing).
    pub monitors: bool,
}

impl Default for StepperOptions {
    fn default() -> Self {
        Self {
            history: HistoryMode::Direct,
            strict: false,
            strict_tau: false,
            memory_budget: 1 << 30,
            monitors: true,
        }
    }
}

enum History {
    Direct(Vec<Field2D>),
    Soe(SoeHistory),
}

/// Solution history and energy bookkeeping of one run.
pub struct SolverState {
    grid: Grid2D,
    alpha: f64,
    params: NonlinearParams,
    options: StepperOptions,
    tau_star: f64,
    mesh: TimeMesh,
    u_prev: Field2D,
    history: History,
    mu_norm_sq: Vec<f64>,
    dcc: DccAccumulator,
    energy_log: Vec<EnergyRecord>,
    events: Vec<MonitorEvent>,
    last_row: Option<L1KernelRow>,
    solver: SpectralSolver,
}

impl SolverState {
    /// `soe_range = (delta, t_max)` is required in SOE mode: the smallest
    /// step and final time the run will see.
    pub fn new(
        u0: Field2D,
        alpha: f64,
        params: NonlinearParams,
        options: StepperOptions,
        soe_range: Option<(f64, f64)>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        params.validate()?;
        if !u0.is_finite() {
            return Err(Error::NonFinite("initial data".into()));
        }
        let grid = u0.grid();
        let history = match options.history {
            HistoryMode::Direct => History::Direct(Vec::new()),
            HistoryMode::Soe { rel_tol } => {
                let (delta, t_max) = soe_range.ok_or_else(|| {
                    Error::InvalidParameter("SOE history needs the step range of the run".into())
                })?;
                History::Soe(SoeHistory::new(
                    SoeKernel::new(alpha, delta, t_max, rel_tol)?,
                    grid,
                ))
            }
        };
        let tau_star = max_step_bound(alpha, params.g, params.epsilon)?;
        let (e0, mu0) = energy_and_potential(&u0, &params);
        let record = EnergyRecord {
            n: 0,
            t: 0.0,
            tau: 0.0,
            energy: e0,
            modified_energy: e0,
            mu_norm_sq: norm_l2_sq(&mu0),
            fp_iters: 0,
            u_linf: norm_linf(&u0),
        };
        Ok(Self {
            grid,
            alpha,
            params,
            options,
            tau_star,
            mesh: TimeMesh::origin(),
            u_prev: u0,
            history,
            mu_norm_sq: Vec::new(),
            dcc: DccAccumulator::new(),
            energy_log: vec![record],
            events: Vec::new(),
            last_row: None,
            solver: SpectralSolver::new(grid),
        })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn params(&self) -> &NonlinearParams {
        &self.params
    }

    pub fn tau_star(&self) -> f64 {
        self.tau_star
    }

    /// Current level `n` (0 before the first step).
    pub fn level(&self) -> usize {
        self.mesh.len()
    }

    pub fn time(&self) -> f64 {
        self.mesh.t_end()
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn solution(&self) -> &Field2D {
        &self.u_prev
    }

    pub fn energy_log(&self) -> &[EnergyRecord] {
        &self.energy_log
    }

    pub fn events(&self) -> &[MonitorEvent] {
        &self.events
    }

    /// `||mu^j||^2` for `j = 1..=n`.
    pub fn mu_norm_sq_history(&self) -> &[f64] {
        &self.mu_norm_sq
    }

    /// Stored differences (direct mode only).
    pub fn diff_history(&self) -> Option<&[Field2D]> {
        match &self.history {
            History::Direct(d) => Some(d),
            History::Soe(_) => None,
        }
    }

    /// L1 row of the most recent level.
    pub fn last_row(&self) -> Option<&L1KernelRow> {
        self.last_row.as_ref()
    }

    /// Advances one level with step `tau`; returns the new record.
    pub fn advance(&mut self, tau: f64, forcing: Option<&dyn Forcing>) -> Result<&EnergyRecord> {
        let t = self.time() + tau;
        self.advance_to(t, forcing)
    }

    /// Advances one level ending exactly at `t_next`.
    pub fn advance_to(
        &mut self,
        t_next: f64,
        forcing: Option<&dyn Forcing>,
    ) -> Result<&EnergyRecord> {
        let tau = t_next - self.time();
        if self.options.strict_tau && tau > self.tau_star {
            return Err(Error::StepRestriction {
                tau,
                tau_star: self.tau_star,
            });
        }
        self.mesh.push_node(t_next)?;
        let n = self.mesh.len();
        let t_n = self.mesh.t_end();
        let row = l1_row_nodes(self.mesh.nodes(), n, self.alpha)?;
        let a0 = row.a0();
        let source = forcing.map(|f| f.eval(self.grid, t_n));

        let rhs = match &mut self.history {
            History::Direct(diffs) => history_rhs(&self.u_prev, diffs, &row, source.as_ref())?,
            History::Soe(h) => {
                let mut rhs = self.u_prev.clone();
                rhs.scale(a0);
                if n > 1 {
                    rhs.axpy(-1.0, &h.history(tau))?;
                }
                if let Some(src) = &source {
                    rhs.axpy(1.0, src)?;
                }
                rhs
            }
        };

        let step = implicit_step(&mut self.solver, &rhs, &self.u_prev, a0, &self.params, n)?;
        let u = step.u;
        let diff = u.sub(&self.u_prev)?;
        match &mut self.history {
            History::Direct(diffs) => {
                let bytes = (diffs.len() + 1) * self.grid.len() * std::mem::size_of::<f64>();
                if bytes > self.options.memory_budget {
                    return Err(Error::MemoryBudget(format!(
                        "direct history needs {bytes} bytes at level {n}, budget is {}; \
                         use the SOE history or a smaller run",
                        self.options.memory_budget
                    )));
                }
                diffs.push(diff);
            }
            History::Soe(h) => h.push(diff, tau)?,
        }

        let (e, mu) = energy_and_potential(&u, &self.params);
        let m = norm_l2_sq(&mu);
        self.mu_norm_sq.push(m);
        let q = self.dcc.push(&row, m)?;
        let e_mod = e + 0.5 * q;
        if !(e.is_finite() && e_mod.is_finite()) {
            return Err(Error::NonFinite(format!("energy at level {n}")));
        }
        let record = EnergyRecord {
            n,
            t: t_n,
            tau,
            energy: e,
            modified_energy: e_mod,
            mu_norm_sq: m,
            fp_iters: step.iterations,
            u_linf: norm_linf(&u),
        };
        self.u_prev = u;
        self.last_row = Some(row);
        self.check_monitors(&record)?;
        self.energy_log.push(record);
        Ok(self.energy_log.last().unwrap())
    }

    fn check_monitors(&mut self, rec: &EnergyRecord) -> Result<()> {
        if !self.options.monitors || rec.tau > self.tau_star {
            return Ok(());
        }
        let prev = self.energy_log.last().expect("initial record present");
        let e0 = self.energy_log[0].energy;
        let slack = |x: f64| DISSIPATION_REL_TOL * (1.0 + x.abs());
        let mut found = Vec::new();
        if rec.modified_energy > prev.modified_energy + slack(prev.modified_energy) {
            found.push(MonitorEvent::Dissipation {
                n: rec.n,
                previous: prev.modified_energy,
                current: rec.modified_energy,
            });
        }
        if rec.energy > rec.modified_energy + slack(rec.modified_energy)
            || rec.modified_energy > e0 + slack(e0)
        {
            found.push(MonitorEvent::EnergyBound {
                n: rec.n,
                energy: rec.energy,
                modified: rec.modified_energy,
                initial: e0,
            });
        }
        for ev in found {
            if self.options.strict {
                return Err(Error::Monitor(ev.to_string()));
            }
            log::warn!("{ev}");
            self.events.push(ev);
        }
        Ok(())
    }
}

/// `||u^n - u^{n-1}|| / tau_n`.
fn rate_norm(u: &Field2D, before: &Field2D, tau: f64) -> Result<f64> {
    Ok(norm_l2(&u.sub(before)?) / tau)
}

/// Everything needed to run the scheme.
pub struct Simulation {
    pub u0: Field2D,
    pub alpha: f64,
    pub params: NonlinearParams,
    pub policy: StepPolicy,
    pub options: StepperOptions,
    /// Requested snapshot times; ascending.
    pub snapshot_times: Vec<f64>,
    pub forcing: Option<Box<dyn Forcing>>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub requested: f64,
    pub t: f64,
    pub n: usize,
    pub field: Field2D,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub solution: Field2D,
    pub energy_log: Vec<EnergyRecord>,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<MonitorEvent>,
    pub mesh: TimeMesh,
    pub mu_norm_sq: Vec<f64>,
    pub tau_star: f64,
}

impl RunOutput {
    pub fn levels(&self) -> usize {
        self.mesh.len()
    }

    pub fn final_record(&self) -> &EnergyRecord {
        self.energy_log
            .last()
            .expect("log holds the initial record")
    }

    pub fn write_energy_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", EnergyRecord::CSV_HEADER)?;
        for r in &self.energy_log {
            writeln!(out, "{}", r.csv_line())?;
        }
        Ok(())
    }
}

/// Picks the next step so targets (snapshot or end time) are hit exactly
/// without leaving a remainder below `floor`.
fn clip_step(tau: f64, t: f64, target: f64, floor: f64) -> f64 {
    let remaining = target - t;
    if tau >= remaining {
        remaining
    } else if remaining - tau < floor {
        0.5 * remaining
    } else {
        tau
    }
}

pub fn run(sim: Simulation) -> Result<RunOutput> {
    let Simulation {
        u0,
        alpha,
        params,
        policy,
        options,
        snapshot_times,
        forcing,
    } = sim;
    let forcing = forcing.as_deref();
    let soe_range = match &policy {
        StepPolicy::Mesh(mesh) => (mesh.tau_min(), mesh.t_end()),
        StepPolicy::Adaptive {
            warmup,
            t_end,
            tau_min,
            ..
        } => (warmup.tau_min().min(0.5 * tau_min), *t_end),
    };
    let strict = options.strict_tau;
    if let (StepPolicy::Mesh(mesh), HistoryMode::Direct) = (&policy, options.history) {
        let bytes = mesh.len().saturating_mul(u0.grid().len() * 8);
        if bytes > options.memory_budget {
            return Err(Error::MemoryBudget(format!(
                "direct history for {} levels on {}^2 points needs {bytes} bytes, budget is {}",
                mesh.len(),
                u0.grid().m(),
                options.memory_budget
            )));
        }
    }
    let mut state = SolverState::new(u0, alpha, params, options, Some(soe_range))?;
    let mut snaps = SnapshotQueue::new(snapshot_times);

    match &policy {
        StepPolicy::Mesh(mesh) => {
            check_step_restriction(mesh, state.tau_star(), strict)?;
            for k in 1..=mesh.len() {
                state.advance(mesh.tau(k), forcing)?;
                snaps.capture(&state);
            }
        }
        StepPolicy::Adaptive {
            warmup,
            t_end,
            eta,
            tau_max,
            tau_min,
        } => {
            let t_end = *t_end;
            if !(t_end > warmup.t_end()) {
                return Err(Error::InvalidParameter(format!(
                    "adaptive end time {t_end} must exceed the warm-up end {}",
                    warmup.t_end()
                )));
            }
            let mut tau_cap = *tau_max;
            if strict && tau_cap > state.tau_star() {
                tau_cap = state.tau_star();
            }
            let tau_floor = tau_min.min(tau_cap);
            check_step_restriction(warmup, state.tau_star(), strict)?;
            let mut rate = 0.0;
            for k in 1..=warmup.len() {
                let before = state.solution().clone();
                state.advance(warmup.tau(k), forcing)?;
                snaps.capture(&state);
                rate = rate_norm(state.solution(), &before, warmup.tau(k))?;
            }
            while state.time() < t_end {
                let proposal = adaptive_next_step(rate, *eta, tau_cap, tau_floor)?;
                let target = snaps.next_target().filter(|&s| s < t_end).unwrap_or(t_end);
                let tau = clip_step(proposal, state.time(), target, 0.5 * tau_floor);
                let before = state.solution().clone();
                if tau == target - state.time() {
                    state.advance_to(target, forcing)?;
                } else {
                    state.advance(tau, forcing)?;
                }
                snaps.capture(&state);
                rate = rate_norm(state.solution(), &before, state.mesh().tau(state.level()))?;
            }
        }
    }

    Ok(RunOutput {
        solution: state.solution().clone(),
        energy_log: state.energy_log().to_vec(),
        snapshots: snaps.taken,
        events: state.events().to_vec(),
        mesh: state.mesh().clone(),
        mu_norm_sq: state.mu_norm_sq_history().to_vec(),
        tau_star: state.tau_star(),
    })
}

struct SnapshotQueue {
    pending: Vec<f64>,
    taken: Vec<Snapshot>,
}

impl SnapshotQueue {
    fn new(mut times: Vec<f64>) -> Self {
        times.sort_by(|a, b| a.total_cmp(b));
        times.reverse();
        Self {
            pending: times,
            taken: Vec::new(),
        }
    }

    fn next_target(&self) -> Option<f64> {
        self.pending.last().copied()
    }

    fn capture(&mut self, state: &SolverState) {
        let t = state.time();
        while let Some(&req) = self.pending.last() {
            if t + 1e-12 * req.abs().max(1.0) < req {
                break;
            }
            self.pending.pop();
            self.taken.push(Snapshot {
                requested: req,
                t,
                n: state.level(),
                field: state.solution().clone(),
            });
        }
    }
}

/// `||mu^n + D_tau^alpha u^n||_inf` for the last level of a direct-mode state.
pub fn scheme_identity_defect(state: &SolverState) -> Result<f64> {
    let diffs = state
        .diff_history()
        .ok_or_else(|| Error::MissingHistory("defect check needs direct history".into()))?;
    let row = state
        .last_row()
        .ok_or_else(|| Error::MissingHistory("no level computed yet".into()))?;
    let caputo = crate::kernels::caputo_apply(diffs, row)?;
    let mu = chemical_potential(state.solution(), state.params());
    Ok(norm_linf(&caputo.add(&mu)?))
}

/// `<v^2, v>`; exposed for energy cross-checks.
pub fn cubic_moment(v: &Field2D) -> f64 {
    let sq = v.map(|x| x * x);
    inner(&sq, v).expect("same grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dcc_row, l1_rows};
    use std::f64::consts::PI;

    fn params() -> NonlinearParams {
        NonlinearParams::new(0.5, 0.25)
    }

    fn bumpy(grid: Grid2D) -> Field2D {
        Field2D::from_fn(grid, |x, y| {
            0.4 * (x + 0.3).sin() * (2.0 * y).cos() + 0.2 * (3.0 * x - y).cos() + 0.05
        })
    }

    fn simulation(u0: Field2D, history: HistoryMode, mesh: TimeMesh) -> Simulation {
        Simulation {
            u0,
            alpha: 0.6,
            params: params(),
            policy: StepPolicy::Mesh(mesh),
            options: StepperOptions {
                history,
                ..StepperOptions::default()
            },
            snapshot_times: Vec::new(),
            forcing: None,
        }
    }

    #[test]
    fn energy_examples() {
        let grid = Grid2D::new(2.0 * PI, 8).unwrap();
        let p = params();
        assert_eq!(energy(&Field2D::zeros(grid), &p), 0.0);

        let c = 0.7f64;
        let area = grid.area();
        let want = area
            * (0.5 * c * c + 0.25 * c.powi(4) - p.g / 3.0 * c.powi(3) - 0.5 * p.epsilon * c * c);
        let got = energy(&Field2D::constant(grid, c), &p);
        assert!((got - want).abs() <= 1e-12 * want.abs());

        // a cos(x): (I + Lap_h) scales by 1 + lambda, <v^2, v> vanishes
        let a = 1.3f64;
        let v = Field2D::from_fn(grid, |x, _| a * x.cos());
        let lam = grid.lap_eigenvalue(1, 0);
        let want = area
            * (0.25 * (1.0 + lam).powi(2) * a * a + 0.25 * 0.375 * a.powi(4)
                - 0.25 * p.epsilon * a * a);
        let got = energy(&v, &p);
        assert!((got - want).abs() <= 1e-12 * want.abs(), "{got} vs {want}");
    }

    #[test]
    fn chemical_potential_of_a_constant() {
        let grid = Grid2D::new(10.0, 8).unwrap();
        let p = params();
        let c = -0.4;
        let mu = chemical_potential(&Field2D::constant(grid, c), &p);
        let want = c + p.f(c);
        assert!(mu.values().iter().all(|&m| (m - want).abs() <= 1e-14));
        assert_eq!(
            norm_linf(&chemical_potential(&Field2D::zeros(grid), &p)),
            0.0
        );
    }

    #[test]
    fn modified_energy_examples() {
        assert_eq!(modified_energy(-3.5, None, &[]).unwrap(), -3.5);
        let mesh = TimeMesh::uniform(1.0, 4).unwrap();
        let p = dcc_row(&l1_rows(&mesh, 4, 0.5).unwrap()).unwrap();
        assert_eq!(modified_energy(2.0, Some(&p), &[0.0; 4]).unwrap(), 2.0);
        assert!(matches!(
            modified_energy(2.0, Some(&p), &[1.0; 3]),
            Err(Error::MissingHistory(_))
        ));
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = Grid2D::new(8.0, 16).unwrap();
        let out = run(simulation(
            Field2D::zeros(grid),
            HistoryMode::Direct,
            TimeMesh::uniform(1.0, 20).unwrap(),
        ))
        .unwrap();
        assert_eq!(norm_linf(&out.solution), 0.0);
        assert!(out
            .energy_log
            .iter()
            .all(|r| r.energy == 0.0 && r.modified_energy == 0.0));
    }

    #[test]
    fn scheme_identity_holds_after_each_step() {
        let grid = Grid2D::new(2.0 * PI, 16).unwrap();
        let opts = StepperOptions::default();
        let mut state = SolverState::new(bumpy(grid), 0.6, params(), opts, None).unwrap();
        for _ in 0..8 {
            state.advance(0.05, None).unwrap();
            let a0 = state.last_row().unwrap().a0();
            let defect = scheme_identity_defect(&state).unwrap();
            assert!(
                defect <= 10.0 * params().fp_tol * (1.0 + a0),
                "defect {defect}"
            );
        }
    }

    #[test]
    fn accumulated_modified_energy_matches_explicit_rows() {
        let grid = Grid2D::new(2.0 * PI, 16).unwrap();
        let mesh = crate::mesh::graded_mesh(1.0, 30, 2.5).unwrap();
        let out = run(simulation(bumpy(grid), HistoryMode::Direct, mesh.clone())).unwrap();
        let rows = l1_rows(&mesh, mesh.len(), 0.6).unwrap();
        for n in 1..=mesh.len() {
            let p = dcc_row(&rows[..n]).unwrap();
            let rec = &out.energy_log[n];
            let want = modified_energy(rec.energy, Some(&p), &out.mu_norm_sq).unwrap();
            assert!((rec.modified_energy - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn near_integer_order_energy_is_backward_euler_like() {
        let grid = Grid2D::new(2.0 * PI, 16).unwrap();
        let mesh = TimeMesh::uniform(1.0, 100).unwrap();
        let mut sim = simulation(bumpy(grid), HistoryMode::Direct, mesh.clone());
        sim.alpha = 0.999;
        let out = run(sim).unwrap();
        let last = out.final_record();
        let integer: f64 = last.energy
            + 0.5
                * (1..=mesh.len())
                    .map(|j| mesh.tau(j) * out.mu_norm_sq[j - 1])
                    .sum::<f64>();
        assert!(
            (last.modified_energy - integer).abs() <= 0.02 * integer.abs(),
            "{} vs {integer}",
            last.modified_energy
        );
    }

    #[test]
    fn soe_history_tracks_direct_history() {
        let grid = Grid2D::new(2.0 * PI, 16).unwrap();
        let mesh = crate::mesh::warmup_uniform_mesh(5.0, 20, 3.0, 0.05).unwrap();
        let direct = run(simulation(bumpy(grid), HistoryMode::Direct, mesh.clone())).unwrap();
        let soe = run(simulation(
            bumpy(grid),
            HistoryMode::Soe { rel_tol: 1e-13 },
            mesh,
        ))
        .unwrap();
        let diff = norm_linf(&direct.solution.sub(&soe.solution).unwrap());
        assert!(diff <= 1e-9, "solutions differ by {diff}");
        for (a, b) in direct.energy_log.iter().zip(&soe.energy_log) {
            assert!(
                (a.modified_energy - b.modified_energy).abs()
                    <= 1e-9 * a.modified_energy.abs().max(1.0)
            );
        }
    }

    #[test]
    fn runs_are_bit_reproducible() {
        let grid = Grid2D::new(2.0 * PI, 16).unwrap();
        let policy = StepPolicy::Adaptive {
            warmup: crate::mesh::graded_mesh(1.0 / 3.0, 10, 3.0).unwrap(),
            t_end: 3.0,
            eta: 10.0,
            tau_max: 0.1,
            tau_min: 1e-3,
        };
        let make = || Simulation {
            policy: policy.clone(),
            ..simulation(bumpy(grid), HistoryMode::Direct, TimeMesh::origin())
        };
        let (a, b) = (run(make()).unwrap(), run(make()).unwrap());
        assert_eq!(a.energy_log, b.energy_log);
        assert_eq!(a.mesh, b.mesh);
    }
}
