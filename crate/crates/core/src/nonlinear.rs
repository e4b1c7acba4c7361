//! Per-level nonlinear solve `Pi_n(w) = 0` by fixed-point iteration.
//!
//! `Pi_n(w) = a0 w - g^{n-1} + (I + Lap_h)^2 w + f(w)`. The linear part is
//! inverted exactly by [`SpectralSolver`]; only the bulk force is lagged:
//! `w^{s+1} = (a0 I + (I + Lap_h)^2)^{-1} (g^{n-1} - f(w^s))`.

use crate::error::{Error, Result};
use crate::grid::{norm_linf, sh_operator, Field2D, SpectralSolver};
use crate::kernels::{history_sum, L1KernelRow};

/// Consecutive growing increments tolerated before the iteration is
/// declared divergent.
const DIVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearParams {
    /// Cubic-term coefficient `g >= 0`.
    pub g: f64,
    /// Quadratic well depth `epsilon > 0`.
    pub epsilon: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
}

impl NonlinearParams {
    pub fn new(g: f64, epsilon: f64) -> Self {
        Self {
            g,
            epsilon,
            fp_tol: 1e-12,
            fp_max_iter: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "g must be >= 0, got {}",
                self.g
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fp_tol must be > 0, got {}",
                self.fp_tol
            )));
        }
        if self.fp_max_iter < 1 {
            return Err(Error::InvalidParameter("fp_max_iter must be >= 1".into()));
        }
        Ok(())
    }

    /// `f(u) = u^3 - g u^2 - eps u`.
    pub fn f(&self, u: f64) -> f64 {
        u * (u * (u - self.g) - self.epsilon)
    }

    /// `F(u) = u^4/4 - g u^3/3 - eps u^2/2`.
    pub fn potential(&self, u: f64) -> f64 {
        let u2 = u * u;
        0.25 * u2 * u2 - self.g / 3.0 * u2 * u - 0.5 * self.epsilon * u2
    }
}

/// Pointwise bulk force `v^3 - g v^2 - eps v`.
pub fn f_bulk(v: &Field2D, params: &NonlinearParams) -> Field2D {
    v.map(|u| params.f(u))
}

/// `g^{n-1} = a0 u^{n-1} - sum_{k=1}^{n-1} a_{n-k}^{(n)} (u^k - u^{k-1})`, plus
/// an optional source term evaluated at `t_n`.
pub fn history_rhs(
    u_prev: &Field2D,
    diff_history: &[Field2D],
    row: &L1KernelRow,
    forcing: Option<&Field2D>,
) -> Result<Field2D> {
    if diff_history.len() + 1 != row.n {
        return Err(Error::MissingHistory(format!(
            "level {} needs {} differences, have {}",
            row.n,
            row.n - 1,
            diff_history.len()
        )));
    }
    let mut rhs = u_prev.clone();
    rhs.scale(row.a0());
    if !diff_history.is_empty() {
        let conv = history_sum(diff_history, row)?;
        rhs.axpy(-1.0, &conv)?;
    }
    if let Some(src) = forcing {
        rhs.axpy(1.0, src)?;
    }
    Ok(rhs)
}

/// `Pi_n(w)`.
pub fn scheme_map(
    w: &Field2D,
    rhs: &Field2D,
    a0: f64,
    params: &NonlinearParams,
) -> Result<Field2D> {
    let mut out = sh_operator(w);
    out.axpy(a0, w)?;
    out.axpy(-1.0, rhs)?;
    out.axpy(1.0, &f_bulk(w, params))?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StepSolution {
    pub u: Field2D,
    pub iterations: usize,
    /// Final increment `||w^{s+1} - w^s||_inf`.
    pub increment: f64,
}

/// Solves `Pi_n(w) = 0` starting from `u_prev`.
pub fn implicit_step(
    solver: &mut SpectralSolver,
    rhs: &Field2D,
    u_prev: &Field2D,
    a0: f64,
    params: &NonlinearParams,
    level: usize,
) -> Result<StepSolution> {
    let mut w = u_prev.clone();
    let mut last = f64::INFINITY;
    let mut growth = 0usize;
    for iter in 1..=params.fp_max_iter {
        let mut src = rhs.clone();
        for (s, &u) in src.values_mut().iter_mut().zip(w.values()) {
            *s -= params.f(u);
        }
        let next = solver.solve(a0, &src)?;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!(
                "fixed-point iterate at level {level}, iteration {iter}"
            )));
        }
        let inc = next
            .values()
            .iter()
            .zip(w.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        w = next;
        if inc <= params.fp_tol {
            return Ok(StepSolution {
                u: w,
                iterations: iter,
                increment: inc,
            });
        }
        if inc > last {
            growth += 1;
            if growth >= DIVERGENCE_WINDOW {
                return Err(Error::NonConvergence {
                    level,
                    iterations: iter,
                    residual: inc,
                    a0,
                    reason: "increments grew for 10 consecutive iterations",
                });
            }
        } else {
            growth = 0;
        }
        last = inc;
    }
    Err(Error::NonConvergence {
        level,
        iterations: params.fp_max_iter,
        residual: last,
        a0,
        reason: "iteration cap reached",
    })
}

/// `||Pi_n(w)||_inf`.
pub fn scheme_residual(
    w: &Field2D,
    rhs: &Field2D,
    a0: f64,
    params: &NonlinearParams,
) -> Result<f64> {
    Ok(norm_linf(&scheme_map(w, rhs, a0, params)?))
}
