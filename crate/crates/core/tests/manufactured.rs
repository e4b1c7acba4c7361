use tfsh::mms::{run_convergence, run_single, MmsConfig, SpatialForcing};

#[test]
fn errors_shrink_with_n() {
    let cfg = MmsConfig {
        m: 16,
        ..MmsConfig::new(0.8, 0.3, 3.0)
    };
    let table = run_convergence(&cfg).unwrap();
    for w in table.rows.windows(2) {
        assert!(
            w[1].error < w[0].error,
            "N = {}: {} -> {}",
            w[1].n,
            w[0].error,
            w[1].error
        );
    }
    assert!(table.rows.iter().all(|r| r.tau_star_ok));
}

#[test]
fn smooth_solution_on_plain_steps() {
    // sigma > 1 and gamma = 1: order min{sigma, 2 - alpha}
    let cfg = MmsConfig {
        m: 16,
        t_end: 2.0,
        n_list: vec![40, 80, 160, 320],
        ..MmsConfig::new(0.8, 1.5, 1.0)
    };
    let table = run_convergence(&cfg).unwrap();
    let last = table.last_order().unwrap();
    assert!((last - 1.2).abs() <= 0.15, "order {last}");
}

#[test]
fn spatial_error_is_second_order() {
    // sigma = 1: the L1 formula is exact for linear-in-time data, so only
    // the spatial error of the continuous forcing remains
    let base = MmsConfig {
        spatial: SpatialForcing::Continuous,
        ..MmsConfig::new(0.5, 1.0, 4.0)
    };
    let errors: Vec<f64> = [8, 16, 32]
        .iter()
        .map(|&m| {
            run_single(&MmsConfig { m, ..base.clone() }, 40)
                .unwrap()
                .error
        })
        .collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            (3.6..=4.4).contains(&ratio),
            "ratio {ratio}, errors {errors:?}"
        );
    }
}

#[test]
fn grid_forcing_has_no_spatial_error_for_linear_time() {
    let cfg = MmsConfig {
        m: 8,
        ..MmsConfig::new(0.5, 1.0, 4.0)
    };
    let row = run_single(&cfg, 40).unwrap();
    assert!(row.error <= 1e-10, "error {}", row.error);
}
