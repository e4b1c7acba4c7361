//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfsh::{Field2D, Grid2D, TimeMesh};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform sample in `[0, 1)`.
pub fn unit(r: &mut ChaCha8Rng) -> f64 {
    (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Mesh on `[0, 1]` whose consecutive step ratios are log-uniform in
/// `[lo, hi]`; the log step size is kept within `[-8, 8]`.
pub fn random_ratio_mesh(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> TimeMesh {
    let (a, b) = (lo.ln(), hi.ln());
    let mut log_tau = 0.0f64;
    let mut steps = Vec::with_capacity(n);
    for k in 0..n {
        if k > 0 {
            let mut d = a + (b - a) * unit(r);
            if (log_tau + d).abs() > 8.0 {
                d = -d;
            }
            log_tau += d;
        }
        steps.push(log_tau.exp());
    }
    let total: f64 = steps.iter().sum();
    let mut nodes = vec![0.0];
    let mut t = 0.0;
    for s in &steps {
        t += s / total;
        nodes.push(t);
    }
    *nodes.last_mut().unwrap() = 1.0;
    TimeMesh::from_nodes(nodes).unwrap()
}

/// Tanh-sinh quadrature of `g` over `[c, d]`. `g` receives the offset from
/// `c` as well, so integrands singular at `c` keep full precision.
pub fn tanh_sinh(c: f64, d: f64, g: impl Fn(f64, f64) -> f64, rel_tol: f64) -> f64 {
    let len = d - c;
    let eval = |h: f64, odd_only: bool| -> f64 {
        let mut s = 0.0;
        let mut k: i64 = if odd_only { 1 } else { 0 };
        let step = if odd_only { 2 } else { 1 };
        loop {
            let u = k as f64 * h;
            let mut add = 0.0;
            for sign in [1.0, -1.0] {
                if k == 0 && sign < 0.0 {
                    continue;
                }
                let z = sign * std::f64::consts::FRAC_PI_2 * u.sinh();
                // w = (1 + tanh z) / 2, computed without cancellation on either side
                let (w, wc) = if z < 0.0 {
                    let e = (2.0 * z).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = (-2.0 * z).exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let dw = std::f64::consts::FRAC_PI_2 * u.cosh() * 2.0 * w * wc;
                if dw == 0.0 || w == 0.0 || wc == 0.0 {
                    continue;
                }
                let off = len * w;
                add += g(c + off, off) * dw;
            }
            s += add;
            if u > 6.5 {
                break;
            }
            k += step;
        }
        s * h * len
    };
    let mut h = 0.5;
    let mut est = eval(h, false);
    for _ in 0..12 {
        h *= 0.5;
        let next = 0.5 * est + eval(h, true);
        if (next - est).abs() <= rel_tol * next.abs() {
            return next;
        }
        est = next;
    }
    est
}

/// Dense five-point Laplacian on the periodic `M x M` grid, row-major with
/// index `i * M + j`.
pub fn dense_laplacian(grid: Grid2D) -> DMatrix<f64> {
    let m = grid.m();
    let h2 = grid.h() * grid.h();
    let mut a = DMatrix::zeros(m * m, m * m);
    for i in 0..m {
        for j in 0..m {
            let row = i * m + j;
            a[(row, row)] -= 4.0 / h2;
            for (di, dj) in [(1, 0), (m - 1, 0), (0, 1), (0, m - 1)] {
                let col = ((i + di) % m) * m + (j + dj) % m;
                a[(row, col)] += 1.0 / h2;
            }
        }
    }
    a
}

/// Dense `(I + Lap_h)^2`.
pub fn dense_sh(grid: Grid2D) -> DMatrix<f64> {
    let n = grid.len();
    let b = DMatrix::identity(n, n) + dense_laplacian(grid);
    &b * &b
}

pub fn to_vec(f: &Field2D) -> DVector<f64> {
    DVector::from_column_slice(f.values())
}

pub fn from_vec(grid: Grid2D, v: &DVector<f64>) -> Field2D {
    Field2D::from_vec(grid, v.as_slice().to_vec()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Sample skewness `m3 / m2^{3/2}`.
pub fn skewness(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}
