//! Adaptive-step pattern formation from the `example2` preset initial data.
//!
//! ```text
//! cargo run --release --example pattern_formation -- [T] [g] [out_dir]
//! ```
//!
//! Writes PGM snapshots at `T/4, T/2, T` and prints the step statistics.
//! Long runs (`T = 512`) take several minutes.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use tfsh::cli::example2_initial;
use tfsh::io::write_field_pgm;
use tfsh::mesh::graded_mesh;
use tfsh::stepper::{run, HistoryMode, StepPolicy, StepperOptions};
use tfsh::{Field2D, Grid2D, NonlinearParams, Simulation};

fn main() -> tfsh::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let t_end: f64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(32.0);
    let g: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let dir = PathBuf::from(args.get(2).cloned().unwrap_or_else(|| "pattern-out".into()));
    std::fs::create_dir_all(&dir)?;

    let grid = Grid2D::new(32.0, 96)?;
    let sim = Simulation {
        u0: Field2D::from_fn(grid, example2_initial),
        alpha: 0.6,
        params: NonlinearParams::new(g, 0.85),
        policy: StepPolicy::Adaptive {
            warmup: graded_mesh(1.0 / 3.0, 30, 3.0)?,
            t_end,
            eta: 10.0,
            tau_max: 0.1,
            tau_min: 1e-3,
        },
        options: StepperOptions {
            history: HistoryMode::Soe { rel_tol: 1e-12 },
            ..StepperOptions::default()
        },
        snapshot_times: vec![t_end / 4.0, t_end / 2.0, t_end],
        forcing: None,
    };
    let out = run(sim)?;
    for s in &out.snapshots {
        let path = dir.join(format!("u_t{}.pgm", s.requested));
        write_field_pgm(&s.field, BufWriter::new(File::create(&path)?))?;
        println!(
            "t = {:>8.3}: range [{:.4}, {:.4}] -> {}",
            s.t,
            s.field.min(),
            s.field.max(),
            path.display()
        );
    }
    let last = out.final_record();
    println!(
        "{} levels, steps in [{:.2e}, {:.2e}], E = {:.6e}, E_mod = {:.6e}",
        out.levels(),
        out.mesh.tau_min(),
        out.mesh.tau_max(),
        last.energy,
        last.modified_energy
    );
    Ok(())
}
