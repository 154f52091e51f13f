//! Equilibrium validation for the linear-quadratic mean-field game: the
//! consistency ODE oracle, route agreement, variational-inequality margins
//! and a-priori field bounds.

use mfg_lab::fbsde::{Grid1d, PdeGrids};
use mfg_lab::measures::DistributionSpec;
use mfg_lab::mfg::{
    self, hjb_fp_solve, mfg_picard, variational_margins, HjbFpParams, MfgPicardParams,
    MfgProblem,
};

fn lq_problem() -> MfgProblem {
    mfg::lq_mean_field(
        1.0,
        0.5,
        1.0,
        DistributionSpec::Normal { mean: 1.0, sd: 0.3 },
        6.0,
    )
}

fn lq_grid() -> Grid1d {
    Grid1d::new(-4.0, 5.0, 360).unwrap()
}

/// Mean path of the equilibrium from the Riccati-consistency ODE system:
/// eta' = eta^2 - k, phi' = phi^2 + 2 eta phi + k (both zero at T), and
/// m' = -(eta + phi) m, solved by dense RK4.
fn riccati_consistency_mean(coupling: f64, t_end: f64, m0: f64, nodes: usize) -> Vec<f64> {
    let fine = 8 * nodes;
    let h = t_end / fine as f64;
    let mut eta = vec![0.0; fine + 1];
    let mut phi = vec![0.0; fine + 1];
    let f_eta = |e: f64| e * e - coupling;
    let f_phi = |e: f64, p: f64| p * p + 2.0 * e * p + coupling;
    for k in (0..fine).rev() {
        // Backward RK4 with the pair (eta, phi).
        let (e1, p1) = (eta[k + 1], phi[k + 1]);
        let k1 = (f_eta(e1), f_phi(e1, p1));
        let k2 = (
            f_eta(e1 - 0.5 * h * k1.0),
            f_phi(e1 - 0.5 * h * k1.0, p1 - 0.5 * h * k1.1),
        );
        let k3 = (
            f_eta(e1 - 0.5 * h * k2.0),
            f_phi(e1 - 0.5 * h * k2.0, p1 - 0.5 * h * k2.1),
        );
        let k4 = (f_eta(e1 - h * k3.0), f_phi(e1 - h * k3.0, p1 - h * k3.1));
        eta[k] = e1 - h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        phi[k] = p1 - h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    // Forward mean with the frozen (eta + phi) rate, RK4 on the fine grid.
    let mut m = vec![m0; fine + 1];
    for k in 0..fine {
        let rate = |idx: f64| -> f64 {
            // linear interpolation of eta + phi at fractional fine index
            let i = idx.floor() as usize;
            let w = idx - i as f64;
            let at = |j: usize| eta[j.min(fine)] + phi[j.min(fine)];
            at(i) * (1.0 - w) + at(i + 1) * w
        };
        let f = |idx: f64, m: f64| -(rate(idx)) * m;
        let k1 = f(k as f64, m[k]);
        let k2 = f(k as f64 + 0.5, m[k] + 0.5 * h * k1);
        let k3 = f(k as f64 + 0.5, m[k] + 0.5 * h * k2);
        let k4 = f(k as f64 + 1.0, m[k] + h * k3);
        m[k + 1] = m[k] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    (0..=nodes).map(|k| m[k * 8]).collect()
}

#[test]
fn lq_equilibrium_mean_matches_consistency_oracle() {
    let p = lq_problem();
    let t_steps = 200;
    let mut params = MfgPicardParams::new(lq_grid(), t_steps);
    params.atoms = 2000;
    params.tol = 2e-4;
    params.damping = 1.0;
    let eq = mfg_picard(&p, &params, 42).unwrap();
    let oracle = riccati_consistency_mean(1.0, 1.0, 1.0, t_steps);
    let mean_path = eq.flow.mean_path();
    let sup: f64 = mean_path
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(sup <= 1e-3, "mean-path sup error {sup}");
    assert!(eq.consistency_gap <= 2.0 * params.tol);
}

#[test]
fn lq_with_target_matches_superposition_oracle() {
    // In the plain LQ game the equilibrium mean is constant (everyone
    // chases the crowd). Adding a target term rho (x - s)^2 / 2 makes the
    // mean move, and the affine structure still yields an exact linear
    // forward-backward ODE oracle solvable by superposition shooting:
    //   eta' = eta^2 - (kappa + rho),       eta(T) = 0,
    //   m'   = -(eta m + chi),              m(0) = m0,
    //   chi' = eta chi + kappa m + rho s,   chi(T) = 0.
    let kappa = 1.0;
    let rho = 0.8;
    let target = -0.5;
    let m0 = 1.0;
    let mut p = lq_problem();
    p.running_cost = std::sync::Arc::new(move |_, x, mu, a| {
        let d = x - mu.mean();
        let e = x - target;
        0.5 * a * a + 0.5 * kappa * d * d + 0.5 * rho * e * e
    });
    p.running_cost_dx = Some(std::sync::Arc::new(move |_, x, mu, _| {
        kappa * (x - mu.mean()) + rho * (x - target)
    }));

    let t_steps = 200;
    let mut params = MfgPicardParams::new(lq_grid(), t_steps);
    params.atoms = 2000;
    params.tol = 2e-4;
    let eq = mfg_picard(&p, &params, 11).unwrap();

    // Oracle on a dense grid.
    let fine = 8 * t_steps;
    let h = p.t_end / fine as f64;
    let mut eta = vec![0.0; fine + 1];
    for k in (0..fine).rev() {
        let f = |e: f64| e * e - (kappa + rho);
        let e1 = eta[k + 1];
        let k1 = f(e1);
        let k2 = f(e1 - 0.5 * h * k1);
        let k3 = f(e1 - 0.5 * h * k2);
        let k4 = f(e1 - h * k3);
        eta[k] = e1 - h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    // Forward IVPs for (m, chi): particular (m0, 0) with the rho s source,
    // homogeneous (0, 1); combine to impose chi(T) = 0.
    let march = |chi0: f64, with_source: bool| -> (Vec<f64>, Vec<f64>) {
        let source = if with_source { rho * target } else { 0.0 };
        let m_init = if with_source { m0 } else { 0.0 };
        let mut m = vec![m_init; fine + 1];
        let mut chi = vec![chi0; fine + 1];
        for k in 0..fine {
            let eta_at = |frac: f64| {
                let idx = k as f64 + frac;
                let i = idx.floor() as usize;
                let w = idx - i as f64;
                eta[i.min(fine)] * (1.0 - w) + eta[(i + 1).min(fine)] * w
            };
            let f = |frac: f64, m: f64, c: f64| -> (f64, f64) {
                let e = eta_at(frac);
                (-(e * m + c), e * c + kappa * m + source)
            };
            let (mk, ck) = (m[k], chi[k]);
            let k1 = f(0.0, mk, ck);
            let k2 = f(0.5, mk + 0.5 * h * k1.0, ck + 0.5 * h * k1.1);
            let k3 = f(0.5, mk + 0.5 * h * k2.0, ck + 0.5 * h * k2.1);
            let k4 = f(1.0, mk + h * k3.0, ck + h * k3.1);
            m[k + 1] = mk + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            chi[k + 1] = ck + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (m, chi)
    };
    let (m_a, chi_a) = march(0.0, true);
    let (m_b, chi_b) = march(1.0, false);
    let coef = -chi_a[fine] / chi_b[fine];
    let oracle: Vec<f64> = (0..=t_steps)
        .map(|k| m_a[8 * k] + coef * m_b[8 * k])
        .collect();

    let mean_path = eq.flow.mean_path();
    let sup: f64 = mean_path
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // The mean must actually move for this to be informative.
    assert!((oracle[0] - oracle[t_steps]).abs() > 0.2, "oracle mean is flat");
    assert!(sup <= 1.5e-3, "mean-path sup error {sup}");
}

#[test]
fn damping_choices_agree() {
    let p = lq_problem();
    let mut params = MfgPicardParams::new(Grid1d::new(-4.0, 5.0, 240).unwrap(), 100);
    params.atoms = 1000;
    params.tol = 5e-4;
    params.damping = 1.0;
    let full = mfg_picard(&p, &params, 42).unwrap();
    params.damping = 0.5;
    let damped = mfg_picard(&p, &params, 42).unwrap();
    let gap = full.flow.sup_wasserstein1(&damped.flow).unwrap();
    assert!(gap <= 2.0 * params.tol, "flow gap {gap}");

    // Fictitious play averages uniformly over the history, so its residual
    // decays like 1/k; give it a budget and tolerance to match.
    params.fictitious_play = true;
    params.tol = 2e-3;
    params.max_iters = 400;
    let averaged = mfg_picard(&p, &params, 42).unwrap();
    let gap2 = full.flow.sup_wasserstein1(&averaged.flow).unwrap();
    assert!(gap2 <= 3e-3, "fictitious-play flow gap {gap2}");
}

#[test]
fn smp_and_hjb_fp_routes_agree() {
    let p = lq_problem();
    let grid = lq_grid();
    let t_steps = 150;
    let mut picard = MfgPicardParams::new(grid, t_steps);
    picard.atoms = 2000;
    picard.tol = 2e-4;
    let smp = mfg_picard(&p, &picard, 42).unwrap();

    let mut hjb = HjbFpParams::new(grid, t_steps);
    hjb.tol = 2e-4;
    hjb.damping = 1.0;
    let analytic = hjb_fp_solve(&p, &hjb).unwrap();
    assert!(analytic.mass_drift <= 1e-12);

    let gap = smp.flow.sup_wasserstein1(&analytic.flow).unwrap();
    let bound = (2.0 * picard.tol).max(grid.dx());
    assert!(gap <= bound, "route gap {gap} vs bound {bound}");
}

#[test]
fn variational_inequality_margins_nonnegative() {
    let p = lq_problem();
    let mut params = MfgPicardParams::new(Grid1d::new(-4.0, 5.0, 240).unwrap(), 100);
    params.atoms = 1200;
    params.tol = 5e-4;
    let eq = mfg_picard(&p, &params, 17).unwrap();
    let margins =
        variational_margins(&p, &eq.flow, &eq.control_field, 50, 3000, 17).unwrap();
    assert_eq!(margins.len(), 50);
    // Paired Monte Carlo tolerance: the optimal control can only be beaten
    // by discretization slack.
    for (i, m) in margins.iter().enumerate() {
        assert!(*m >= -2e-3, "perturbation {i} margin {m}");
    }
    // Most perturbations cost strictly more.
    let strict = margins.iter().filter(|&&m| m > 0.0).count();
    assert!(strict >= 45, "only {strict} of 50 margins strictly positive");
}

#[test]
fn decoupling_field_satisfies_a_priori_bounds() {
    let p = lq_problem();
    let mut params = MfgPicardParams::new(lq_grid(), 150);
    params.atoms = 1200;
    params.tol = 5e-4;
    let eq = mfg_picard(&p, &params, 4).unwrap();
    // Gronwall-type constant from the declared bounds.
    let c_apriori =
        p.cost_grad_bound * (1.0 + p.t_end) * (p.drift_bound * p.t_end).exp();
    assert!(
        eq.growth_constant <= c_apriori,
        "growth {} vs a-priori {}",
        eq.growth_constant,
        c_apriori
    );
    assert!(eq.lipschitz_constant <= c_apriori);
    // Feedback bound (c_L / lambda)(1 + c) with the computed constant.
    let mut worst = 0.0f64;
    for row in &eq.control_field.values {
        for &a in row {
            worst = worst.max(a.abs());
        }
    }
    assert!(
        worst <= eq.control_bound + 1e-9,
        "control magnitude {worst} vs bound {}",
        eq.control_bound
    );
}

#[test]
fn crowd_aversion_spreads_the_population() {
    let p = mfg::crowd_aversion(
        0.5,
        0.25,
        0.5,
        1.0,
        DistributionSpec::Normal { mean: 0.0, sd: 0.4 },
        2.0,
    );
    let mut params = MfgPicardParams::new(Grid1d::new(-3.5, 3.5, 160).unwrap(), 60);
    params.atoms = 600;
    params.tol = 2e-3;
    params.damping = 0.35;
    params.max_iters = 80;
    let eq = mfg_picard(&p, &params, 9).unwrap();
    let first = eq.flow.at(0);
    let last = eq.flow.at(eq.flow.len() - 1);
    // Crowd aversion plus diffusion: the population must widen.
    assert!(last.variance() > first.variance());
    assert!(eq.consistency_gap <= 2.0 * params.tol);
}
