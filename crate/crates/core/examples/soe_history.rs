//! Sum-of-exponentials history against the direct L1 convolution.

use tfsh::grid::norm_linf;
use tfsh::kernels::soe::{fast_history_apply, SoeKernel};
use tfsh::mesh::two_part_mesh;
use tfsh::{caputo_apply, l1_row, Field2D, Grid2D};

fn main() -> tfsh::Result<()> {
    let alpha = 0.6;
    let kernel = SoeKernel::new(alpha, 1e-4, 100.0, 1e-12)?;
    println!(
        "kernel on [1e-4, 100]: {} exponentials, measured relative error {:.2e}",
        kernel.terms(),
        kernel.rel_error()
    );

    let grid = Grid2D::new(8.0, 16)?;
    let mesh = two_part_mesh(4.0, 400, 3.0, 7)?;
    let diffs: Vec<Field2D> = (1..=mesh.len())
        .map(|k| {
            let t = mesh.t(k);
            Field2D::from_fn(grid, |x, y| 1e-2 * (x + t).sin() * (0.5 * y).cos())
        })
        .collect();
    let n = mesh.len();
    let direct = caputo_apply(&diffs, &l1_row(&mesh, n, alpha)?)?;
    let fast = fast_history_apply(&diffs, &mesh, alpha, 1e-10)?;
    println!(
        "level {n}: |fast - direct|_inf = {:.2e}",
        norm_linf(&fast.sub(&direct)?)
    );
    Ok(())
}
