//! Variable-step L1 kernels and their discrete complementary convolution
//! (DCC) kernels.
//!
//! Rows are stored by history distance: `coeffs[d]` is `a_d^{(n)}` (resp.
//! `p_d^{(n)}`), the weight applied to level `k = n - d`.

pub mod soe;

use crate::error::{Error, Result};
use crate::grid::Field2D;
use crate::mesh::TimeMesh;

/// Gamma function (musl `tgamma`, sub-ulp-level accuracy on (0, 3]).
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// `omega_beta(t) = t^(beta-1) / Gamma(beta)`.
pub fn omega(beta: f64, t: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!(
            "omega: beta must be positive, got {beta}"
        )));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("omega: t must be positive, got {t}")));
    }
    Ok(t.powf(beta - 1.0) / gamma(beta))
}

/// `a^b - c^b` for `a > c >= 0`, `0 < b < 1`, with `gap = a - c` supplied
/// separately so tiny steps far from the origin keep full precision.
fn pow_difference(a: f64, c: f64, gap: f64, b: f64) -> f64 {
    if c <= 0.0 {
        return a.powf(b);
    }
    -a.powf(b) * (b * (-gap / a).ln_1p()).exp_m1()
}

/// Single L1 weight `a_{n-k}^{(n)}` from the nodes.
pub fn l1_coeff(nodes: &[f64], n: usize, k: usize, alpha: f64) -> f64 {
    debug_assert!(1 <= k && k <= n && n < nodes.len());
    let beta = 1.0 - alpha;
    let tau = nodes[k] - nodes[k - 1];
    let far = nodes[n] - nodes[k - 1];
    let near = nodes[n] - nodes[k];
    pow_difference(far, near, tau, beta) / (gamma(2.0 - alpha) * tau)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "alpha must lie in (0,1), got {alpha}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1KernelRow {
    pub n: usize,
    pub coeffs: Vec<f64>,
}

impl L1KernelRow {
    /// `a_d^{(n)}`.
    pub fn a(&self, d: usize) -> f64 {
        self.coeffs[d]
    }

    pub fn a0(&self) -> f64 {
        self.coeffs[0]
    }

    /// Weight applied to level `k` (`a_{n-k}^{(n)}`).
    pub fn at_level(&self, k: usize) -> f64 {
        self.coeffs[self.n - k]
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.coeffs.windows(2).all(|w| w[0] > w[1]) && self.coeffs.iter().all(|&a| a > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DccKernelRow {
    pub n: usize,
    pub coeffs: Vec<f64>,
}

impl DccKernelRow {
    /// `p_d^{(n)}`.
    pub fn p(&self, d: usize) -> f64 {
        self.coeffs[d]
    }

    /// Weight paired with level `j` (`p_{n-j}^{(n)}`).
    pub fn at_level(&self, j: usize) -> f64 {
        self.coeffs[self.n - j]
    }
}

/// `a_{n-k}^{(n)} = (omega_{2-alpha}(t_n - t_{k-1}) - omega_{2-alpha}(t_n - t_k)) / tau_k`.
pub fn l1_row(mesh: &TimeMesh, n: usize, alpha: f64) -> Result<L1KernelRow> {
    check_alpha(alpha)?;
    l1_row_nodes(mesh.nodes(), n, alpha)
}

pub(crate) fn l1_row_nodes(nodes: &[f64], n: usize, alpha: f64) -> Result<L1KernelRow> {
    let len = nodes.len().saturating_sub(1);
    if n < 1 || n > len {
        return Err(Error::IndexOutOfRange { index: n, len });
    }
    let coeffs = (0..n).map(|d| l1_coeff(nodes, n, n - d, alpha)).collect();
    Ok(L1KernelRow { n, coeffs })
}

/// Rows `1..=upto` of the L1 kernel.
pub fn l1_rows(mesh: &TimeMesh, upto: usize, alpha: f64) -> Result<Vec<L1KernelRow>> {
    (1..=upto).map(|n| l1_row(mesh, n, alpha)).collect()
}

/// DCC row for level `n = rows.len()`; `rows[j - 1]` must be the L1 row of
/// level `j`.
pub fn dcc_row(rows: &[L1KernelRow]) -> Result<DccKernelRow> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::MissingHistory(
            "dcc_row needs at least one L1 row".into(),
        ));
    }
    for (idx, row) in rows.iter().enumerate() {
        if row.n != idx + 1 || row.coeffs.len() != row.n {
            return Err(Error::MissingHistory(format!(
                "expected L1 row of level {} at position {}, found level {}",
                idx + 1,
                idx,
                row.n
            )));
        }
    }
    let mut p = vec![0.0; n];
    p[0] = 1.0 / rows[n - 1].a0();
    for k in (1..n).rev() {
        let mut acc = 0.0;
        for j in (k + 1)..=n {
            let row = &rows[j - 1];
            acc += (row.a(j - k - 1) - row.a(j - k)) * p[n - j];
        }
        p[n - k] = acc / rows[k - 1].a0();
    }
    Ok(DccKernelRow { n, coeffs: p })
}

/// DCC row of level `n` computed straight from the mesh.
pub fn dcc_row_for(mesh: &TimeMesh, n: usize, alpha: f64) -> Result<DccKernelRow> {
    dcc_row(&l1_rows(mesh, n, alpha)?)
}

/// Same as [`dcc_row_for`] but with `O(n)` memory: the L1 weights are
/// evaluated on the fly, one column `a^{(j)}_{j-k}, j > k` at a time.
/// Still `O(n^2)` work.
pub fn dcc_row_streaming(mesh: &TimeMesh, n: usize, alpha: f64) -> Result<DccKernelRow> {
    check_alpha(alpha)?;
    if n == 0 || n > mesh.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            len: mesh.len(),
        });
    }
    let nodes = mesh.nodes();
    // p[d] = p_d^{(n)}; col[j] holds a^{(j)}_{j-k-1} for the previous k.
    let mut p = vec![0.0; n];
    p[0] = 1.0 / l1_coeff(nodes, n, n, alpha);
    let mut col = vec![0.0; n + 1];
    col[n] = l1_coeff(nodes, n, n, alpha);
    for k in (1..n).rev() {
        let mut s = 0.0;
        for j in k + 1..=n {
            let a_k = l1_coeff(nodes, j, k, alpha);
            s += (col[j] - a_k) * p[n - j];
            col[j] = a_k;
        }
        col[k] = l1_coeff(nodes, k, k, alpha);
        p[n - k] = s / col[k];
    }
    Ok(DccKernelRow { n, coeffs: p })
}

/// `sum_{k=1}^{n} a_{n-k}^{(n)} (v^k - v^{k-1})`.
pub fn caputo_apply(diff_history: &[Field2D], row: &L1KernelRow) -> Result<Field2D> {
    if diff_history.len() != row.n {
        return Err(Error::LengthMismatch {
            expected: row.n,
            got: diff_history.len(),
        });
    }
    history_sum(diff_history, row)
}

/// `sum_{k=1}^{m} a_{n-k}^{(n)} diff_k` for a history of length `m <= n`.
pub fn history_sum(diffs: &[Field2D], row: &L1KernelRow) -> Result<Field2D> {
    let first = diffs
        .first()
        .ok_or_else(|| Error::MissingHistory("empty difference history".into()))?;
    if diffs.len() > row.n {
        return Err(Error::LengthMismatch {
            expected: row.n,
            got: diffs.len(),
        });
    }
    let mut out = Field2D::zeros(first.grid());
    for (idx, d) in diffs.iter().enumerate() {
        out.axpy(row.at_level(idx + 1), d)?;
    }
    Ok(out)
}

/// Scalar form of [`caputo_apply`].
pub fn caputo_apply_scalar(diffs: &[f64], row: &L1KernelRow) -> Result<f64> {
    if diffs.len() != row.n {
        return Err(Error::LengthMismatch {
            expected: row.n,
            got: diffs.len(),
        });
    }
    Ok(diffs
        .iter()
        .enumerate()
        .map(|(i, d)| row.at_level(i + 1) * d)
        .sum())
}

/// Running value of `sum_{j=1}^{n} p_{n-j}^{(n)} m_j` without forming DCC rows.
///
/// With `A` the lower-triangular L1 matrix the complementarity identity
/// reads `P A = J` (`J` all-ones lower triangular), so `P m = J (A^{-1} m)`:
/// one forward-substitution entry plus a prefix sum per level.
#[derive(Debug, Clone, Default)]
pub struct DccAccumulator {
    increments: Vec<f64>,
    total: f64,
}

impl DccAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn level(&self) -> usize {
        self.increments.len()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Adds level `n = level() + 1` with its L1 row and returns the new total.
    pub fn push(&mut self, row: &L1KernelRow, value: f64) -> Result<f64> {
        let n = self.increments.len() + 1;
        if row.n != n {
            return Err(Error::MissingHistory(format!(
                "accumulator at level {} received row of level {}",
                n - 1,
                row.n
            )));
        }
        let mut rhs = value;
        for (idx, z) in self.increments.iter().enumerate() {
            rhs -= row.at_level(idx + 1) * z;
        }
        let z = rhs / row.a0();
        self.increments.push(z);
        self.total += z;
        Ok(self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{graded_mesh, two_part_mesh};

    #[test]
    fn gamma_reference_values() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let cases = [
            (0.5, sqrt_pi),
            (1.5, sqrt_pi / 2.0),
            (2.5, 0.75 * sqrt_pi),
            (1.0, 1.0),
            (2.0, 1.0),
            (1.0 / 3.0, 2.678_938_534_707_747_6),
            (0.1, 9.513_507_698_668_732),
            (1.3, 0.897_470_696_306_277_2),
        ];
        for (x, expected) in cases {
            let rel = (gamma(x) - expected).abs() / expected;
            assert!(rel < 1e-14, "Gamma({x}) rel err {rel:e}");
        }
    }

    #[test]
    fn omega_examples() {
        assert!((omega(1.0, 7.3).unwrap() - 1.0).abs() < 1e-15);
        assert!((omega(2.0, 3.25).unwrap() - 3.25).abs() < 1e-15);
        let v = omega(0.5, 1.0).unwrap();
        assert!((v - 0.564_189_583_547_756_3).abs() < 1e-15);
        assert!(omega(0.5, 0.0).is_err());
        assert!(omega(0.0, 1.0).is_err());
        assert!(omega(-1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_unit_mesh_rows() {
        let mesh = TimeMesh::uniform(2.0, 2).unwrap();
        let g15 = gamma(1.5);
        let r1 = l1_row(&mesh, 1, 0.5).unwrap();
        assert!((r1.a0() - 1.0 / g15).abs() < 1e-15);
        assert!((r1.a0() - std::f64::consts::FRAC_2_SQRT_PI).abs() < 1e-12);
        let r2 = l1_row(&mesh, 2, 0.5).unwrap();
        assert!((r2.a(1) - (2f64.sqrt() - 1.0) / g15).abs() < 1e-15);
        assert!((r2.a(1) - 0.467_390_0).abs() < 1e-7);
    }

    #[test]
    fn l1_row_index_errors() {
        let mesh = TimeMesh::uniform(1.0, 3).unwrap();
        assert!(matches!(
            l1_row(&mesh, 0, 0.5),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            l1_row(&mesh, 4, 0.5),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(l1_row(&mesh, 1, 1.0).is_err());
    }

    #[test]
    fn dcc_first_level_is_reciprocal() {
        let mesh = graded_mesh(1.0, 5, 3.0).unwrap();
        let rows = l1_rows(&mesh, 1, 0.4).unwrap();
        let p = dcc_row(&rows).unwrap();
        assert_eq!(p.p(0), 1.0 / rows[0].a0());
    }

    #[test]
    fn dcc_rejects_missing_rows() {
        assert!(dcc_row(&[]).is_err());
        let mesh = TimeMesh::uniform(1.0, 3).unwrap();
        let rows = vec![
            l1_row(&mesh, 1, 0.5).unwrap(),
            l1_row(&mesh, 3, 0.5).unwrap(),
        ];
        assert!(matches!(dcc_row(&rows), Err(Error::MissingHistory(_))));
    }

    #[test]
    fn complementarity_on_two_part_mesh() {
        let mesh = two_part_mesh(1.0, 50, 4.0, 3).unwrap();
        let rows = l1_rows(&mesh, 50, 0.5).unwrap();
        for n in [1, 2, 17, 50] {
            let p = dcc_row(&rows[..n]).unwrap();
            for k in 1..=n {
                let s: f64 = (k..=n)
                    .map(|j| p.at_level(j) * rows[j - 1].at_level(k))
                    .sum();
                assert!((s - 1.0).abs() < 1e-12, "n={n} k={k} sum={s}");
            }
        }
    }

    #[test]
    fn streaming_row_matches_stored_rows() {
        let mesh = two_part_mesh(1.0, 60, 3.0, 4).unwrap();
        for n in [1, 2, 31, 60] {
            let a = dcc_row_for(&mesh, n, 0.4).unwrap();
            let b = dcc_row_streaming(&mesh, n, 0.4).unwrap();
            for d in 0..n {
                assert!(
                    (a.p(d) - b.p(d)).abs() <= 1e-13 * a.p(d).abs(),
                    "n={n} d={d}"
                );
            }
        }
        assert!(dcc_row_streaming(&mesh, 61, 0.4).is_err());
    }

    #[test]
    fn accumulator_matches_dcc_rows() {
        let mesh = two_part_mesh(1.0, 40, 3.0, 11).unwrap();
        let alpha = 0.7;
        let rows = l1_rows(&mesh, 40, alpha).unwrap();
        let values: Vec<f64> = (1..=40).map(|j| 1.0 + (j as f64).sin().powi(2)).collect();
        let mut acc = DccAccumulator::new();
        for n in 1..=40 {
            let total = acc.push(&rows[n - 1], values[n - 1]).unwrap();
            let p = dcc_row(&rows[..n]).unwrap();
            let direct: f64 = (1..=n).map(|j| p.at_level(j) * values[j - 1]).sum();
            assert!((total - direct).abs() <= 1e-12 * direct.abs(), "n={n}");
        }
    }

    #[test]
    fn scalar_caputo_of_linear_function() {
        // v(t) = t: the L1 interpolant is exact, so D^alpha t_n = t_n^{1-alpha}/Gamma(2-alpha)
        let mesh = TimeMesh::uniform(1.0, 10).unwrap();
        let diffs = vec![0.1; 10];
        let row = l1_row(&mesh, 10, 0.5).unwrap();
        let v = caputo_apply_scalar(&diffs, &row).unwrap();
        let exact = 1.0 / gamma(1.5);
        assert!((v - exact).abs() < 1e-13);
        assert!(caputo_apply_scalar(&diffs[..9], &row).is_err());
    }

    #[test]
    fn pow_difference_is_cancellation_safe() {
        let a: f64 = 1.0;
        let gap = 1e-14;
        let c = a - gap;
        let beta = 0.5;
        // derivative estimate: beta * a^(beta-1) * gap
        let approx = beta * gap;
        let v = pow_difference(a, c, gap, beta);
        assert!((v - approx).abs() / approx < 1e-6);
    }
}
