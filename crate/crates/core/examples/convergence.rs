//! Manufactured-solution convergence table for one parameter cell.
//!
//! ```text
//! cargo run --release --example convergence -- [alpha] [sigma] [gamma] [M] [grid|continuous]
//! ```

use tfsh::mms::{run_convergence, MmsConfig, SpatialForcing};

fn main() -> tfsh::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let mut cfg = MmsConfig::new(num(0, 0.5), num(1, 0.3), num(2, 4.0));
    cfg.m = num(3, 128.0) as usize;
    if args.get(4).map(String::as_str) == Some("continuous") {
        cfg.spatial = SpatialForcing::Continuous;
    }

    let table = run_convergence(&cfg)?;
    println!(
        "alpha = {}, sigma = {}, gamma = {}, M = {}",
        cfg.alpha, cfg.sigma, cfg.gamma, cfg.m
    );
    println!(
        "{:>5} {:>12} {:>12} {:>7} {:>6}",
        "N", "tau_max", "e(N)", "order", "fp"
    );
    for r in &table.rows {
        let order = r
            .order
            .map(|o| format!("{o:.3}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>5} {:>12.4e} {:>12.4e} {:>7} {:>6}",
            r.n, r.tau_max, r.error, order, r.max_fp_iters
        );
    }
    println!(
        "least-squares order {:.3}, predicted min(gamma sigma, 2 - alpha) = {:.3}",
        table.order_lsq.unwrap_or(f64::NAN),
        table.predicted_order()
    );
    Ok(())
}
