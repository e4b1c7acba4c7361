//! L1 and complementary (DCC) kernels on a graded mesh.
//!
//! Prints the last rows and checks the complementarity sum
//! `sum_{j=k}^n p_{n-j}^(n) a_{j-k}^(j) = 1`.

use tfsh::kernels::{dcc_row, l1_rows};
use tfsh::mesh::graded_mesh;

fn main() -> tfsh::Result<()> {
    let alpha = 0.5;
    let mesh = graded_mesh(1.0, 12, 2.0)?;
    let rows = l1_rows(&mesh, mesh.len(), alpha)?;
    let n = rows.len();
    let dcc = dcc_row(&rows)?;

    println!("level n = {n}, alpha = {alpha}");
    println!("{:>3} {:>14} {:>14}", "k", "a_(n-k)", "p_(n-k)");
    for k in 1..=n {
        println!(
            "{k:>3} {:>14.6e} {:>14.6e}",
            rows[n - 1].a(n - k),
            dcc.p(n - k)
        );
    }

    let worst = (1..=n)
        .map(|k| {
            let s: f64 = (k..=n).map(|j| dcc.p(n - j) * rows[j - 1].a(j - k)).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max);
    println!("max |complementarity sum - 1| = {worst:.2e}");
    println!(
        "a-rows strictly decreasing: {}",
        rows.iter().all(|r| r.is_strictly_decreasing())
    );
    Ok(())
}
