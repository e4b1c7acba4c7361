//! Graded, two-part random and warm-up/uniform meshes, and the step bound.

use tfsh::mesh::{
    graded_mesh, max_step_bound, two_part_layout, two_part_mesh, warmup_uniform_mesh,
};

fn main() -> tfsh::Result<()> {
    let graded = graded_mesh(1.0, 10, 3.0)?;
    println!(
        "graded (N=10, gamma=3): tau_1 = {:.3e}, tau_N = {:.3e}",
        graded.tau(1),
        graded.tau(graded.len())
    );

    let layout = two_part_layout(1.0, 80, 4.0)?;
    let mesh = two_part_mesh(1.0, 80, 4.0, 2022)?;
    println!(
        "two-part (N=80, gamma=4): T0 = {}, {} graded + {} random steps, tau_max = {:.4}, r* = {:.3}",
        layout.t_split,
        layout.graded_intervals,
        layout.random_intervals,
        mesh.tau_max(),
        mesh.r_star()
    );

    let warm = warmup_uniform_mesh(5.0, 30, 3.0, 0.01)?;
    println!("warm-up + uniform (T=5, tau=0.01): {} levels", warm.len());

    for (alpha, g, eps) in [(0.5, 0.1, 0.5), (0.6, 1.0, 0.85), (0.8, 0.1, 0.5)] {
        println!(
            "tau* (alpha={alpha}, g={g}, eps={eps}) = {:.6}",
            max_step_bound(alpha, g, eps)?
        );
    }

    let mut out = Vec::new();
    mesh.write_csv(&mut out)?;
    let text = String::from_utf8(out).expect("utf8");
    println!("first lines of the mesh CSV:");
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
