//! Decoupling-scheme validation: closed-form pricing, refinement orders,
//! PDE residuals and cross-method agreement on the coupled instance.

use mfg_lab::fbsde::{
    four_step_solve, linear_coupled_instance, solve_bsde_regression_with,
    solve_quasilinear_pde, z_map, BlackScholesInstance, PdeGrids,
};

fn bs_instance() -> BlackScholesInstance {
    BlackScholesInstance::new(1.0, 1.0, 0.05, 0.1, 0.2, 1.0).unwrap()
}

#[test]
fn four_step_prices_the_put_within_half_percent() {
    let instance = bs_instance();
    let spec = instance.log_space_spec();
    let grids = instance.grids(400, 400);
    let solution = four_step_solve(&spec, &grids, 400, 7).unwrap();
    let oracle = instance.price();
    let rel = (solution.y0 - oracle).abs() / oracle;
    assert!(rel <= 0.005, "price {} vs {} ({:.4}%)", solution.y0, oracle, rel * 100.0);
}

#[test]
fn refinement_shrinks_the_pricing_error() {
    let instance = bs_instance();
    let spec = instance.log_space_spec();
    let oracle = instance.price();
    let error_at = |x_steps: usize, t_steps: usize| {
        let grids = instance.grids(x_steps, t_steps);
        let theta = solve_quasilinear_pde(&spec, &grids).unwrap();
        (theta.eval_at_node(0, instance.s0.ln()) - oracle).abs()
    };
    let coarse = error_at(200, 200);
    let fine = error_at(400, 400);
    assert!(
        coarse / fine >= 1.7,
        "refinement ratio {} (errors {coarse} -> {fine})",
        coarse / fine
    );
}

#[test]
fn log_price_pde_residual_is_grid_order_small() {
    // Interior finite-difference residual of theta_t + b theta_x
    // + sigma^2/2 theta_xx - h = 0 in log coordinates, away from the
    // terminal kink; halving the grid shrinks it at second order.
    let instance = bs_instance();
    let spec = instance.log_space_spec();
    let sigma = instance.sigma;
    let r = instance.rate;
    let b = r - 0.5 * sigma * sigma; // effective advection after the z-term
    let residual_for = |x_steps: usize, t_steps: usize| {
        let grids = instance.grids(x_steps, t_steps);
        let theta = solve_quasilinear_pde(&spec, &grids).unwrap();
        let dt = theta.t_grid[1] - theta.t_grid[0];
        let dx = theta.x_grid[1] - theta.x_grid[0];
        let nt = theta.t_grid.len() - 1;
        let nx = theta.x_grid.len() - 1;
        let mut worst = 0.0f64;
        for n in 1..nt {
            // Fixed smooth window: away from the terminal layer and the
            // strike, independent of the grid.
            if theta.t_grid[n] > 0.9 - 1e-12 {
                continue;
            }
            for i in (nx / 4)..(3 * nx / 4) {
                if (theta.x_grid[i]).abs() < 0.15 {
                    continue; // strike neighborhood carries the kink echo
                }
                let v = &theta.values;
                let theta_t = (v[n + 1][i] - v[n - 1][i]) / (2.0 * dt);
                let theta_x = (v[n][i + 1] - v[n][i - 1]) / (2.0 * dx);
                let theta_xx = (v[n][i + 1] - 2.0 * v[n][i] + v[n][i - 1]) / (dx * dx);
                let res = theta_t + b * theta_x + 0.5 * sigma * sigma * theta_xx - r * v[n][i];
                worst = worst.max(res.abs());
            }
        }
        worst
    };
    let coarse = residual_for(150, 150);
    let fine = residual_for(300, 300);
    assert!(coarse <= 1e-3, "coarse interior residual {coarse}");
    assert!(
        coarse / fine >= 2.5,
        "residual refinement ratio {} ({coarse} -> {fine})",
        coarse / fine
    );
}

#[test]
fn y_theta_consistency_is_interpolation_exact() {
    // Step 4 defines Y through theta, so on-path values equal the field's
    // interpolant by construction; verify the reconstruction wiring.
    let instance = bs_instance();
    let spec = instance.log_space_spec();
    let grids = instance.grids(200, 100);
    let solution = four_step_solve(&spec, &grids, 50, 11).unwrap();
    for (p, (xs, ys)) in solution.x_paths.iter().zip(&solution.y_paths).enumerate() {
        for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            let expect = solution.theta.eval_at_node(k, x);
            assert!(
                (y - expect).abs() <= 1e-12,
                "path {p} node {k}: {y} vs {expect}"
            );
        }
        if p > 20 {
            break;
        }
    }
}

#[test]
fn terminal_consistency_halves_under_refinement() {
    // Smooth coupled instance: E|Y_T - g(X_T)| is pure interpolation error,
    // fourth... at least second order in the grid.
    let spec = linear_coupled_instance(1.0, 0.25);
    let mk = |x_steps: usize, t_steps: usize, paths: usize| {
        let grids = PdeGrids::new(
            mfg_lab::fbsde::Grid1d::new(1.0 - 5.0, 1.0 + 5.0, x_steps).unwrap(),
            t_steps,
        );
        four_step_solve(&spec, &grids, paths, 13).unwrap().terminal_consistency
    };
    let coarse = mk(80, 40, 4000);
    let fine = mk(160, 80, 4000);
    assert!(
        coarse / fine >= 2.0,
        "terminal consistency ratio {} ({coarse} -> {fine})",
        coarse / fine
    );
}

#[test]
fn coupled_linear_cross_method_agreement() {
    let spec = linear_coupled_instance(1.0, 0.25);
    let grids = PdeGrids::new(
        mfg_lab::fbsde::Grid1d::new(-4.0, 6.0, 320).unwrap(),
        160,
    );
    let pde = four_step_solve(&spec, &grids, 200, 5).unwrap();
    let regression = solve_bsde_regression_with(&spec, 50, 20_000, 4, 5, 6).unwrap();
    let gap = (pde.y0 - regression.y0).abs() / pde.y0.abs();
    assert!(
        gap <= 0.02,
        "four-step {} vs regression {} (gap {:.4})",
        pde.y0,
        regression.y0,
        gap
    );
}

#[test]
fn z_map_matches_black_scholes_form_on_paths() {
    // z = sigma * s * theta_s in price coordinates = sigma * theta_x in
    // log coordinates; checked through the reconstructed Z paths.
    let instance = bs_instance();
    let spec = instance.log_space_spec();
    let grids = instance.grids(200, 100);
    let solution = four_step_solve(&spec, &grids, 20, 3).unwrap();
    for (xs, zs) in solution.x_paths.iter().zip(&solution.z_paths) {
        for (k, (&x, &z)) in xs.iter().zip(zs).enumerate() {
            let slope = solution.theta.x_derivative(k, x);
            let expect = z_map(&spec.volatility, solution.theta.t_grid[k], x, 0.0, slope)
                .unwrap();
            assert!((z - expect).abs() <= 1e-12);
        }
    }
}
