//! Doubly periodic uniform grid on `(0, L)^2`, grid functions, the
//! five-point Laplacian and the Fourier solver for `a0 I + (I + Lap_h)^2`.
//!
//! Storage is row-major with `i` (the x index) as the slow index:
//! `values[i * M + j]` holds `v(x_i, y_j)`, `x_i = i h`, `y_j = j h`,
//! `i, j = 0..M-1`. Snapshot files use the same convention (row `i` of the
//! file is the fixed-x line `x_i`).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid2D {
    length: f64,
    m: usize,
}

impl Grid2D {
    pub fn new(length: f64, m: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "domain length must be positive, got {length}"
            )));
        }
        if m < 2 {
            return Err(Error::InvalidParameter(format!(
                "need at least 2 grid intervals, got {m}"
            )));
        }
        if m < 4 || !m.is_multiple_of(2) {
            log::warn!("grid size M = {m}: an even M >= 4 is recommended");
        }
        Ok(Self { length, m })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.length / self.m as f64
    }

    pub fn len(&self) -> usize {
        self.m * self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|Omega_h| = h^2 M^2`.
    pub fn area(&self) -> f64 {
        let h = self.h();
        h * h * self.len() as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    /// Eigenvalue of the 1D three-point second difference for wavenumber `p`.
    pub fn lap_eigenvalue_1d(&self, p: usize) -> f64 {
        let h = self.h();
        let s = (PI * p as f64 / self.m as f64).sin();
        -4.0 / (h * h) * s * s
    }

    /// Eigenvalue of the five-point Laplacian for Fourier mode `(p, q)`.
    pub fn lap_eigenvalue(&self, p: usize, q: usize) -> f64 {
        self.lap_eigenvalue_1d(p) + self.lap_eigenvalue_1d(q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    grid: Grid2D,
    values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_vec(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(x_i, y_j)`.
    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let m = grid.m();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..m {
            let x = grid.coord(i);
            for j in 0..m {
                values.push(f(x, grid.coord(j)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let m = self.grid.m;
        self.values[i * m + j] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field2D {
        Field2D {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_grid(&self, other: &Field2D) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Field2D, f: impl Fn(f64, f64) -> f64) -> Result<Field2D> {
        self.check_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Field2D {
            grid: self.grid,
            values,
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Field2D) -> Result<()> {
        self.check_grid(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Field2D) -> Result<Field2D> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field2D) -> Result<Field2D> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Periodic shift: `out(i, j) = self(i + di, j + dj)`.
    pub fn shifted(&self, di: usize, dj: usize) -> Field2D {
        let m = self.grid.m;
        let mut out = Field2D::zeros(self.grid);
        for i in 0..m {
            for j in 0..m {
                out.values[i * m + j] = self.values[((i + di) % m) * m + (j + dj) % m];
            }
        }
        out
    }
}

/// Five-point periodic Laplacian.
pub fn laplacian(v: &Field2D) -> Field2D {
    let grid = v.grid;
    let m = grid.m;
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let src = &v.values;
    let mut out = vec![0.0; src.len()];
    for i in 0..m {
        let up = if i + 1 == m { 0 } else { i + 1 } * m;
        let down = if i == 0 { m - 1 } else { i - 1 } * m;
        let row = i * m;
        for j in 0..m {
            let right = if j + 1 == m { 0 } else { j + 1 };
            let left = if j == 0 { m - 1 } else { j - 1 };
            out[row + j] = (src[up + j] + src[down + j] + src[row + right] + src[row + left]
                - 4.0 * src[row + j])
                * inv_h2;
        }
    }
    Field2D { grid, values: out }
}

/// `(I + Lap_h) v`.
pub fn shifted_laplacian(v: &Field2D) -> Field2D {
    let mut w = laplacian(v);
    w.axpy(1.0, v).expect("same grid");
    w
}

/// `(I + Lap_h)^2 v`, two Laplacian applications.
pub fn sh_operator(v: &Field2D) -> Field2D {
    shifted_laplacian(&shifted_laplacian(v))
}

/// Forward differences `(delta_x v_{i+1/2,j}, delta_y v_{i,j+1/2})`.
pub fn forward_gradient(v: &Field2D) -> (Field2D, Field2D) {
    let m = v.grid.m;
    let inv_h = 1.0 / v.grid.h();
    let mut gx = Field2D::zeros(v.grid);
    let mut gy = Field2D::zeros(v.grid);
    for i in 0..m {
        for j in 0..m {
            let c = v.get(i, j);
            gx.set(i, j, (v.get((i + 1) % m, j) - c) * inv_h);
            gy.set(i, j, (v.get(i, (j + 1) % m) - c) * inv_h);
        }
    }
    (gx, gy)
}

/// `<v, w> = h^2 sum v w`.
pub fn inner(v: &Field2D, w: &Field2D) -> Result<f64> {
    v.check_grid(w)?;
    let h = v.grid.h();
    Ok(h * h
        * v.values
            .iter()
            .zip(&w.values)
            .map(|(a, b)| a * b)
            .sum::<f64>())
}

pub fn norm_l2_sq(v: &Field2D) -> f64 {
    let h = v.grid.h();
    h * h * v.values.iter().map(|a| a * a).sum::<f64>()
}

pub fn norm_l2(v: &Field2D) -> f64 {
    norm_l2_sq(v).sqrt()
}

pub fn norm_l4(v: &Field2D) -> f64 {
    let h = v.grid.h();
    (h * h * v.values.iter().map(|a| (a * a) * (a * a)).sum::<f64>()).powf(0.25)
}

pub fn norm_linf(v: &Field2D) -> f64 {
    v.values.iter().fold(0.0, |acc: f64, a| acc.max(a.abs()))
}

/// Modal solver for `(a0 I + (I + Lap_h)^2) w = rhs`.
///
/// Each Fourier mode `(p, q)` is divided by `a0 + (1 + lambda_pq)^2`; the
/// denominator is at least `a0`, so any `a0 > 0` gives a well-posed solve.
pub struct SpectralSolver {
    grid: Grid2D,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `(1 + lambda_pq)^2`, symmetric in `(p, q)`.
    symbol: Vec<f64>,
    buffer: Vec<Complex64>,
    transposed: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for SpectralSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralSolver")
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralSolver {
    pub fn new(grid: Grid2D) -> Self {
        let m = grid.m();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        let lam: Vec<f64> = (0..m).map(|p| grid.lap_eigenvalue_1d(p)).collect();
        let mut symbol = vec![0.0; m * m];
        for p in 0..m {
            for q in 0..m {
                let s = 1.0 + lam[p] + lam[q];
                symbol[p * m + q] = s * s;
            }
        }
        Self {
            grid,
            forward,
            inverse,
            symbol,
            buffer: vec![Complex64::default(); m * m],
            transposed: vec![Complex64::default(); m * m],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    fn transpose(m: usize, src: &[Complex64], dst: &mut [Complex64]) {
        for i in 0..m {
            for j in 0..m {
                dst[j * m + i] = src[i * m + j];
            }
        }
    }

    /// Applies `rhs -> F^{-1} diag(mult(symbol)) F rhs`.
    fn apply_modal(&mut self, rhs: &Field2D, mult: impl Fn(f64) -> f64) -> Result<Field2D> {
        if rhs.grid != self.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                rhs.grid, self.grid
            )));
        }
        let m = self.grid.m();
        for (c, &v) in self.buffer.iter_mut().zip(&rhs.values) {
            *c = Complex64::new(v, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        Self::transpose(m, &self.buffer, &mut self.transposed);
        self.forward
            .process_with_scratch(&mut self.transposed, &mut self.scratch);
        for (c, &s) in self.transposed.iter_mut().zip(&self.symbol) {
            *c *= mult(s);
        }
        self.inverse
            .process_with_scratch(&mut self.transposed, &mut self.scratch);
        Self::transpose(m, &self.transposed, &mut self.buffer);
        self.inverse
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        let norm = 1.0 / (m * m) as f64;
        let values = self.buffer.iter().map(|c| c.re * norm).collect();
        Ok(Field2D {
            grid: self.grid,
            values,
        })
    }

    /// Solves `(a0 I + (I + Lap_h)^2) w = rhs`.
    pub fn solve(&mut self, a0: f64, rhs: &Field2D) -> Result<Field2D> {
        if !(a0 > 0.0) || !a0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "spectral shift a0 must be positive, got {a0}"
            )));
        }
        self.apply_modal(rhs, |s| 1.0 / (a0 + s))
    }

    /// `(I + Lap_h)^2 v` through the transform (for cross-checks).
    pub fn apply_sh(&mut self, v: &Field2D) -> Result<Field2D> {
        self.apply_modal(v, |s| s)
    }
}

/// `||(a0 I + (I + Lap_h)^2) w - rhs||`.
pub fn solve_residual(a0: f64, w: &Field2D, rhs: &Field2D) -> Result<f64> {
    let mut lhs = sh_operator(w);
    lhs.axpy(a0, w)?;
    Ok(norm_l2(&lhs.sub(rhs)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random(grid: Grid2D, seed: u64) -> Field2D {
        let mut state = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let values = (0..grid.len())
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Field2D::from_vec(grid, values).unwrap()
    }

    #[test]
    fn laplacian_kills_constants() {
        let g = Grid2D::new(3.0, 8).unwrap();
        let lap = laplacian(&Field2D::constant(g, 2.5));
        assert!(norm_linf(&lap) < 1e-12);
    }

    #[test]
    fn laplacian_sine_eigenpair() {
        let l = 5.0;
        let g = Grid2D::new(l, 16).unwrap();
        let k = 2.0 * PI / l;
        let v = Field2D::from_fn(g, |x, y| (k * x).sin() * (k * y).sin());
        let h = g.h();
        let lambda = -8.0 / (h * h) * (PI * h / l).sin().powi(2);
        let lap = laplacian(&v);
        let mut diff = lap.clone();
        diff.axpy(-lambda, &v).unwrap();
        assert!(norm_linf(&diff) < 1e-12);
    }

    #[test]
    fn laplacian_checkerboard() {
        let g = Grid2D::new(2.0, 8).unwrap();
        let mut v = Field2D::zeros(g);
        for i in 0..8 {
            for j in 0..8 {
                v.set(i, j, if (i + j) % 2 == 0 { 1.0 } else { -1.0 });
            }
        }
        let h = g.h();
        let lap = laplacian(&v);
        let mut diff = lap;
        diff.axpy(8.0 / (h * h), &v).unwrap();
        assert!(norm_linf(&diff) < 1e-10);
    }

    #[test]
    fn sh_operator_on_eigenfield_and_constant() {
        let g = Grid2D::new(2.0 * PI, 12).unwrap();
        let v = Field2D::from_fn(g, |x, y| (2.0 * x).cos() * y.sin());
        let lambda = g.lap_eigenvalue(2, 1);
        let out = sh_operator(&v);
        let mut diff = out;
        diff.axpy(-(1.0 + lambda).powi(2), &v).unwrap();
        assert!(norm_linf(&diff) < 1e-12);

        let c = Field2D::constant(g, -1.75);
        let out = sh_operator(&c);
        assert!(out.values().iter().all(|&x| (x + 1.75).abs() < 1e-12));
    }

    #[test]
    fn norms_of_unit_field() {
        let g = Grid2D::new(32.0, 96).unwrap();
        let one = Field2D::constant(g, 1.0);
        assert!((norm_l2_sq(&one) - 1024.0).abs() < 1e-9);
        let zero = Field2D::zeros(g);
        assert_eq!(norm_l2(&zero), 0.0);
        assert_eq!(norm_l4(&zero), 0.0);
        assert_eq!(norm_linf(&zero), 0.0);
    }

    #[test]
    fn discrete_green_formula() {
        let g = Grid2D::new(4.0, 10).unwrap();
        let v = pseudo_random(g, 1);
        let w = pseudo_random(g, 2);
        let mut neg_lap = laplacian(&v);
        neg_lap.scale(-1.0);
        let lhs = inner(&neg_lap, &w).unwrap();
        let (vx, vy) = forward_gradient(&v);
        let (wx, wy) = forward_gradient(&w);
        let rhs = inner(&vx, &wx).unwrap() + inner(&vy, &wy).unwrap();
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn inner_rejects_grid_mismatch() {
        let a = Field2D::zeros(Grid2D::new(1.0, 4).unwrap());
        let b = Field2D::zeros(Grid2D::new(1.0, 6).unwrap());
        assert!(matches!(inner(&a, &b), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn spectral_solve_eigenfield_and_constant() {
        let g = Grid2D::new(2.0 * PI, 16).unwrap();
        let mut solver = SpectralSolver::new(g);
        let a0 = 3.7;
        let v = Field2D::from_fn(g, |x, y| (3.0 * x).sin() * (2.0 * y).cos());
        let lambda = g.lap_eigenvalue(3, 2);
        let mut rhs = v.clone();
        rhs.scale(a0 + (1.0 + lambda).powi(2));
        let w = solver.solve(a0, &rhs).unwrap();
        assert!(norm_linf(&w.sub(&v).unwrap()) < 1e-12);

        let c = solver.solve(a0, &Field2D::constant(g, 2.0)).unwrap();
        assert!(c
            .values()
            .iter()
            .all(|&x| (x - 2.0 / (a0 + 1.0)).abs() < 1e-14));

        assert!(solver.solve(0.0, &rhs).is_err());
        assert!(solver.solve(-1.0, &rhs).is_err());
    }

    #[test]
    fn spectral_residual_small() {
        let g = Grid2D::new(32.0, 24).unwrap();
        let mut solver = SpectralSolver::new(g);
        let rhs = pseudo_random(g, 9);
        let w = solver.solve(0.3, &rhs).unwrap();
        let r = solve_residual(0.3, &w, &rhs).unwrap();
        assert!(r <= 1e-10 * (norm_l2(&rhs) + 1.0), "residual {r:e}");
        let sh = solver.apply_sh(&rhs).unwrap();
        assert!(norm_linf(&sh.sub(&sh_operator(&rhs)).unwrap()) < 1e-10);
    }

    #[test]
    fn symmetry_and_positivity() {
        let g = Grid2D::new(7.0, 8).unwrap();
        let v = pseudo_random(g, 3);
        let w = pseudo_random(g, 4);
        let a = inner(&laplacian(&v), &w).unwrap();
        let b = inner(&v, &laplacian(&w)).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        let q = inner(&sh_operator(&v), &v).unwrap();
        let r = norm_l2_sq(&shifted_laplacian(&v));
        assert!(q >= 0.0);
        assert!((q - r).abs() < 1e-10 * (1.0 + r));
    }

    #[test]
    fn norms_translation_invariant() {
        let g = Grid2D::new(1.0, 8).unwrap();
        let v = pseudo_random(g, 5);
        let s = v.shifted(3, 5);
        assert!((norm_l2(&v) - norm_l2(&s)).abs() < 1e-14);
        assert!((norm_l4(&v) - norm_l4(&s)).abs() < 1e-14);
        assert_eq!(norm_linf(&v), norm_linf(&s));
    }
}
