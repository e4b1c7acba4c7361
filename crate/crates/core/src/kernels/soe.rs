//! Sum-of-exponentials compression of the L1 history term.
//!
//! `t^{-alpha} = (1/Gamma(alpha)) int_R exp(alpha x - t e^x) dx` is
//! discretized by the trapezoidal rule on a truncated `x` range, giving
//! `omega_{1-alpha}(t) ~ sum_l w_l exp(-s_l t)` with uniform relative
//! accuracy on `[delta, t_max]`. Integrating each exponential exactly over
//! the linear pieces turns the history sum into one decaying recurrence per
//! exponential, so a level costs `O(#terms * M^2)` instead of `O(n M^2)`.
//!
//! Direct summation ([`super::caputo_apply`]) remains the reference.

use std::f64::consts::PI;

use super::{gamma, l1_row};
use crate::error::{Error, Result};
use crate::grid::{norm_linf, Field2D, Grid2D};
use crate::mesh::TimeMesh;

/// Relative accuracy below which double precision cannot certify the fit.
const FLOOR_REL_TOL: f64 = 2e-15;
const CHECK_SAMPLES: usize = 4000;

/// `(1 - exp(-z)) / z`.
fn phi(z: f64) -> f64 {
    if z < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

#[derive(Debug, Clone)]
pub struct SoeKernel {
    alpha: f64,
    delta: f64,
    t_max: f64,
    rates: Vec<f64>,
    weights: Vec<f64>,
    rel_error: f64,
}

impl SoeKernel {
    /// Fits `omega_{1-alpha}` on `[delta, t_max]` to relative accuracy
    /// `rel_tol`, verified on a dense logarithmic sample.
    pub fn new(alpha: f64, delta: f64, t_max: f64, rel_tol: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0,1), got {alpha}"
            )));
        }
        if !(delta > 0.0 && t_max >= delta && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < delta <= t_max (delta = {delta}, t_max = {t_max})"
            )));
        }
        if !(rel_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {rel_tol}"
            )));
        }
        if rel_tol < FLOOR_REL_TOL {
            return Err(Error::ToleranceUnachievable {
                requested: rel_tol,
                achievable: FLOOR_REL_TOL,
            });
        }
        let mut target = rel_tol;
        let mut best = f64::INFINITY;
        for _ in 0..4 {
            let kernel = Self::build(alpha, delta, t_max, target);
            if kernel.rel_error <= rel_tol {
                return Ok(kernel);
            }
            best = best.min(kernel.rel_error);
            target *= 0.1;
        }
        Err(Error::ToleranceUnachievable {
            requested: rel_tol,
            achievable: best,
        })
    }

    fn build(alpha: f64, delta: f64, t_max: f64, eps: f64) -> Self {
        let part = eps / 3.0;
        let ga = gamma(alpha);
        // Trapezoid aliasing: 2 |Gamma(alpha + i y)| / Gamma(alpha), y = 2 pi / hx.
        let mut y: f64 = 10.0;
        for _ in 0..20 {
            let rhs = (2.0 * (2.0 * PI).sqrt() / (ga * part)).ln() + (alpha - 0.5) * y.ln();
            y = (2.0 / PI * rhs).max(1.0);
        }
        let hx = 2.0 * PI / y;
        // Left tail: e^{alpha x_lo} / alpha relative to t_max^{-alpha} Gamma(alpha).
        let x_lo = (part * alpha * ga).ln() / alpha - t_max.ln();
        // Right tail: Gamma(alpha, z) / Gamma(alpha) <= z^{alpha-1} e^{-z} / Gamma(alpha).
        let mut z: f64 = 30.0;
        for _ in 0..20 {
            z = ((1.0 / (part * ga)).ln() + (alpha - 1.0) * z.ln()).max(1.0);
        }
        let x_hi = (z / delta).ln();
        let count = ((x_hi - x_lo) / hx).ceil() as usize + 1;
        let scale = hx / (ga * gamma(1.0 - alpha));
        let mut rates = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        for l in 0..count {
            let x = x_lo + l as f64 * hx;
            rates.push(x.exp());
            weights.push(scale * (alpha * x).exp());
        }
        let mut kernel = Self {
            alpha,
            delta,
            t_max,
            rates,
            weights,
            rel_error: f64::INFINITY,
        };
        kernel.rel_error = kernel.measure_rel_error();
        kernel
    }

    fn measure_rel_error(&self) -> f64 {
        let span = (self.t_max / self.delta).ln();
        let g1 = gamma(1.0 - self.alpha);
        let mut worst = 0.0f64;
        for i in 0..=CHECK_SAMPLES {
            let t = self.delta * (span * i as f64 / CHECK_SAMPLES as f64).exp();
            let exact = t.powf(-self.alpha) / g1;
            worst = worst.max((self.eval(t) - exact).abs() / exact);
        }
        // sampled maximum, padded for the gaps between samples
        1.25 * worst
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.rates
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * (-s * t).exp())
            .sum()
    }

    pub fn terms(&self) -> usize {
        self.rates.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Verified relative error bound on `[delta, t_max]`.
    pub fn rel_error(&self) -> f64 {
        self.rel_error
    }

    /// Relative bound including accumulated rounding over all terms.
    pub fn history_error_factor(&self) -> f64 {
        self.rel_error + 4.0 * self.terms() as f64 * f64::EPSILON
    }
}

/// Incremental compressed history for the time loop.
///
/// After level `m` is solved, [`SoeHistory::push`] records `u^m - u^{m-1}`
/// and `tau_m`; [`SoeHistory::history`] then returns
/// `sum_{k<=m} a_{n-k}^{(n)} (u^k - u^{k-1})` for the next level `n = m+1`
/// given `tau_n`, to the kernel's relative accuracy as long as
/// `tau_n >= delta` and `t_n <= t_max`.
#[derive(Debug, Clone)]
pub struct SoeHistory {
    kernel: SoeKernel,
    grid: Grid2D,
    states: Vec<f64>,
    pending: Option<(Field2D, f64)>,
    levels: usize,
}

impl SoeHistory {
    pub fn new(kernel: SoeKernel, grid: Grid2D) -> Self {
        let states = vec![0.0; kernel.terms() * grid.len()];
        Self {
            kernel,
            grid,
            states,
            pending: None,
            levels: 0,
        }
    }

    pub fn kernel(&self) -> &SoeKernel {
        &self.kernel
    }

    /// Number of differences absorbed so far.
    pub fn levels(&self) -> usize {
        self.levels + usize::from(self.pending.is_some())
    }

    pub fn memory_bytes(&self) -> usize {
        self.states.len() * std::mem::size_of::<f64>()
    }

    pub fn push(&mut self, diff: Field2D, tau: f64) -> Result<()> {
        if diff.grid() != self.grid {
            return Err(Error::GridMismatch(
                "difference field on a different grid".into(),
            ));
        }
        if self.pending.is_some() {
            self.fold_pending();
        }
        self.pending = Some((diff, tau));
        Ok(())
    }

    fn fold_pending(&mut self) {
        if let Some((diff, tau)) = self.pending.take() {
            let len = self.grid.len();
            for (l, &s) in self.kernel.rates.iter().enumerate() {
                let decay = (-s * tau).exp();
                let gain = phi(s * tau);
                let state = &mut self.states[l * len..(l + 1) * len];
                for (x, d) in state.iter_mut().zip(diff.values()) {
                    *x = decay * *x + gain * d;
                }
            }
            self.levels += 1;
        }
    }

    /// History convolution for the next level with step `tau_next`.
    pub fn history(&mut self, tau_next: f64) -> Field2D {
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        let pending = self.pending.take();
        if pending.is_some() {
            self.levels += 1;
        }
        for (l, (&s, &w)) in self
            .kernel
            .rates
            .iter()
            .zip(&self.kernel.weights)
            .enumerate()
        {
            let weight = w * (-s * tau_next).exp();
            let state = &mut self.states[l * len..(l + 1) * len];
            match &pending {
                Some((diff, tau)) => {
                    let decay = (-s * tau).exp();
                    let gain = phi(s * tau);
                    for ((x, d), o) in state.iter_mut().zip(diff.values()).zip(out.iter_mut()) {
                        *x = decay * *x + gain * d;
                        *o += weight * *x;
                    }
                }
                None => {
                    for (x, o) in state.iter().zip(out.iter_mut()) {
                        *o += weight * x;
                    }
                }
            }
        }
        Field2D::from_vec(self.grid, out).expect("length matches grid")
    }
}

/// Compressed evaluation of `sum_{k=1}^{n} a_{n-k}^{(n)} diff_k` with
/// `n = diff_history.len()` on `mesh`, accurate to `tol` absolute per grid
/// point. The newest level uses the exact weight `a_0^{(n)}`.
///
/// The bound `rel * sum_{k<n} a_{n-k} ||diff_k||_inf` is certified before
/// returning; if it cannot be brought under `tol` the call fails.
pub fn fast_history_apply(
    diff_history: &[Field2D],
    mesh: &TimeMesh,
    alpha: f64,
    tol: f64,
) -> Result<Field2D> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let n = diff_history.len();
    let first = diff_history
        .first()
        .ok_or_else(|| Error::MissingHistory("empty difference history".into()))?;
    if n > mesh.len() {
        return Err(Error::LengthMismatch {
            expected: mesh.len(),
            got: n,
        });
    }
    let row = l1_row(mesh, n, alpha)?;
    let mut out = diff_history[n - 1].clone();
    out.scale(row.a0());
    if n == 1 {
        return Ok(out);
    }

    let scale: f64 = diff_history[..n - 1]
        .iter()
        .enumerate()
        .map(|(i, d)| row.at_level(i + 1) * norm_linf(d))
        .sum();
    if scale == 0.0 {
        return Ok(out);
    }

    let tau_n = mesh.tau(n);
    let t_n = mesh.t(n);
    let mut rel = (tol / scale).min(1e-3);
    let kernel = loop {
        match SoeKernel::new(alpha, tau_n, t_n, rel.max(FLOOR_REL_TOL)) {
            Ok(k) if k.history_error_factor() * scale <= tol => break k,
            Ok(k) => {
                if rel <= FLOOR_REL_TOL {
                    return Err(Error::ToleranceUnachievable {
                        requested: tol,
                        achievable: k.history_error_factor() * scale,
                    });
                }
                rel *= 0.1;
            }
            Err(Error::ToleranceUnachievable { achievable, .. }) => {
                return Err(Error::ToleranceUnachievable {
                    requested: tol,
                    achievable: achievable * scale,
                });
            }
            Err(e) => return Err(e),
        }
    };

    let mut hist = SoeHistory::new(kernel, first.grid());
    for (i, d) in diff_history[..n - 1].iter().enumerate() {
        hist.push(d.clone(), mesh.tau(i + 1))?;
    }
    let h = hist.history(tau_n);
    out.axpy(1.0, &h)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{caputo_apply, l1_row, omega};
    use crate::mesh::{graded_mesh, two_part_mesh};

    #[test]
    fn kernel_fit_meets_tolerance() {
        for &alpha in &[0.3, 0.6, 0.999] {
            let k = SoeKernel::new(alpha, 1e-5, 600.0, 1e-12).unwrap();
            assert!(k.rel_error() <= 1e-12);
            for &t in &[1e-5, 3.3e-3, 0.7, 41.0, 600.0] {
                let exact = omega(1.0 - alpha, t).unwrap();
                assert!(
                    (k.eval(t) - exact).abs() <= 1e-12 * exact,
                    "alpha={alpha} t={t}"
                );
            }
        }
    }

    #[test]
    fn kernel_rejects_impossible_tolerance() {
        assert!(matches!(
            SoeKernel::new(0.5, 1e-3, 1.0, 1e-17),
            Err(Error::ToleranceUnachievable { .. })
        ));
    }

    fn sample_history(grid: Grid2D, n: usize) -> Vec<Field2D> {
        (1..=n)
            .map(|k| {
                let kf = k as f64;
                Field2D::from_fn(grid, |x, y| {
                    (kf * 0.37 + x).sin() * (y - 0.1 * kf).cos() / kf.sqrt()
                })
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let grid = Grid2D::new(2.0 * PI, 8).unwrap();
        let mesh = two_part_mesh(1.0, 60, 3.0, 5).unwrap();
        let diffs = sample_history(grid, 60);
        for &n in &[1usize, 2, 30, 60] {
            let row = l1_row(&mesh, n, 0.5).unwrap();
            let direct = caputo_apply(&diffs[..n], &row).unwrap();
            let fast = fast_history_apply(&diffs[..n], &mesh, 0.5, 1e-10).unwrap();
            let err = norm_linf(&fast.sub(&direct).unwrap());
            assert!(err <= 1e-10, "n={n} err={err:e}");
        }
    }

    #[test]
    fn single_level_is_exact_and_zero_history_is_zero() {
        let grid = Grid2D::new(1.0, 4).unwrap();
        let mesh = graded_mesh(1.0, 10, 2.0).unwrap();
        let d = sample_history(grid, 1);
        let row = l1_row(&mesh, 1, 0.4).unwrap();
        let fast = fast_history_apply(&d, &mesh, 0.4, 1e-12).unwrap();
        let mut expect = d[0].clone();
        expect.scale(row.a0());
        assert_eq!(fast, expect);

        let zeros = vec![Field2D::zeros(grid); 7];
        let fast = fast_history_apply(&zeros, &mesh, 0.4, 1e-12).unwrap();
        assert_eq!(norm_linf(&fast), 0.0);
    }

    #[test]
    fn unreachable_tolerance_fails_loudly() {
        let grid = Grid2D::new(1.0, 4).unwrap();
        let mesh = graded_mesh(1.0, 10, 2.0).unwrap();
        let mut diffs = sample_history(grid, 10);
        for d in diffs.iter_mut() {
            d.scale(1e6);
        }
        let err = fast_history_apply(&diffs, &mesh, 0.4, 1e-12).unwrap_err();
        assert!(matches!(err, Error::ToleranceUnachievable { .. }));
        assert!(fast_history_apply(&diffs, &mesh, 0.4, 0.0).is_err());
    }

    #[test]
    fn incremental_history_tracks_direct_sum() {
        let grid = Grid2D::new(3.0, 6).unwrap();
        let mesh = graded_mesh(2.0, 40, 2.5).unwrap();
        let alpha = 0.6;
        let kernel = SoeKernel::new(alpha, mesh.tau_min(), mesh.t_end(), 1e-13).unwrap();
        let mut hist = SoeHistory::new(kernel, grid);
        let diffs = sample_history(grid, 40);
        for n in 2..=40 {
            hist.push(diffs[n - 2].clone(), mesh.tau(n - 1)).unwrap();
            let approx = hist.history(mesh.tau(n));
            let row = l1_row(&mesh, n, alpha).unwrap();
            let direct = crate::kernels::history_sum(&diffs[..n - 1], &row).unwrap();
            let err = norm_linf(&approx.sub(&direct).unwrap());
            assert!(err < 1e-11, "n={n} err={err:e}");
            assert_eq!(hist.levels(), n - 1);
        }
    }
}
