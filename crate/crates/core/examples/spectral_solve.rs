//! The implicit linear operator `a0 I + (I + Lap_h)^2` inverted by FFT.

use tfsh::grid::{norm_linf, sh_operator, solve_residual, Field2D, Grid2D, SpectralSolver};

fn main() -> tfsh::Result<()> {
    let grid = Grid2D::new(32.0, 64)?;
    let rhs = Field2D::from_fn(grid, |x, y| {
        (x / 3.0).sin() * (y / 5.0).cos() + 0.1 * (x + y).cos()
    });
    let mut solver = SpectralSolver::new(grid);
    for a0 in [0.5, 2.0, 50.0] {
        let w = solver.solve(a0, &rhs)?;
        let mut check = sh_operator(&w);
        check.axpy(a0, &w)?;
        let direct = norm_linf(&check.sub(&rhs)?);
        println!(
            "a0 = {a0:>5}: |w|_inf = {:.4e}, residual max {:.2e}, L2 {:.2e}",
            norm_linf(&w),
            direct,
            solve_residual(a0, &w, &rhs)?
        );
    }
    Ok(())
}
