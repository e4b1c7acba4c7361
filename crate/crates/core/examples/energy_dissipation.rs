//! Original and modified energies along a uniform run.
//!
//! The modified energy must not increase and must stay between the
//! original energy and its initial value whenever `tau <= tau*`.

use tfsh::cli::example2_initial;
use tfsh::mesh::warmup_uniform_mesh;
use tfsh::stepper::{run, HistoryMode, StepPolicy, StepperOptions};
use tfsh::{Field2D, Grid2D, NonlinearParams, Simulation};

fn main() -> tfsh::Result<()> {
    let grid = Grid2D::new(32.0, 32)?;
    let params = NonlinearParams::new(1.0, 0.85);
    let mesh = warmup_uniform_mesh(10.0, 30, 3.0, 0.05)?;
    let sim = Simulation {
        u0: Field2D::from_fn(grid, example2_initial),
        alpha: 0.6,
        params,
        policy: StepPolicy::Mesh(mesh),
        options: StepperOptions {
            history: HistoryMode::Soe { rel_tol: 1e-12 },
            ..StepperOptions::default()
        },
        snapshot_times: Vec::new(),
        forcing: None,
    };
    let out = run(sim)?;
    println!("tau* = {:.4}, levels = {}", out.tau_star, out.levels());
    println!("{:>6} {:>8} {:>16} {:>16}", "n", "t", "E", "E_mod");
    let step = (out.energy_log.len() / 10).max(1);
    for r in out.energy_log.iter().step_by(step) {
        println!(
            "{:>6} {:>8.3} {:>16.9e} {:>16.9e}",
            r.n, r.t, r.energy, r.modified_energy
        );
    }
    let worst = out
        .energy_log
        .windows(2)
        .map(|w| w[1].modified_energy - w[0].modified_energy)
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "largest one-step change of E_mod: {worst:.3e}; monitor warnings: {}",
        out.events.len()
    );
    Ok(())
}
