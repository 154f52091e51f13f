//! Acceptance suite: every release criterion at its stated tolerance, one
//! pass/fail line per criterion. The criteria run sequentially in a single
//! test so the per-criterion runtime budgets are meaningful.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to watch the
//! lines as they print.

use mfg_lab::fbsde::{
    self, four_step_solve, linear_coupled_instance, solve_bsde_regression,
    solve_bsde_regression_with, solve_quasilinear_pde, BlackScholesInstance, Grid1d, PdeGrids,
};
use mfg_lab::games::{cournot, BimatrixGame};
use mfg_lab::mckean_vlasov::{chaos_gap, simulate_interacting, solve_nonlinear, DriftKernel,
    McKeanSpec};
use mfg_lab::measures::{wasserstein1, DistributionSpec, EmpiricalMeasure};
use mfg_lab::meeting::{self, MeetingSpec};
use mfg_lab::mfg::{
    self, epsilon_nash_estimate, hjb_fp_solve, mfg_picard, variational_margins, HjbFpParams,
    MfgPicardParams,
};
use mfg_lab::rng;
use mfg_lab::{aiyagari, Error};
use rand::Rng;
use std::process::Command;
use std::time::Instant;

struct Criterion {
    name: &'static str,
    budget_s: f64,
}

impl Criterion {
    fn check(&self, started: Instant, passed: bool, detail: String) {
        let elapsed = started.elapsed().as_secs_f64();
        let verdict = if passed && elapsed <= self.budget_s {
            "PASS"
        } else {
            "FAIL"
        };
        println!(
            "acceptance {} [{verdict}] {detail} ({elapsed:.1}s of {:.0}s budget)",
            self.name, self.budget_s
        );
        assert!(passed, "{}: {detail}", self.name);
        assert!(
            elapsed <= self.budget_s,
            "{}: runtime {elapsed:.1}s over budget {:.0}s",
            self.name,
            self.budget_s
        );
    }
}

fn criterion_1_games() {
    let c = Criterion { name: "1 static games", budget_s: 1.0 };
    let started = Instant::now();

    let dilemma = BimatrixGame::prisoners_dilemma();
    let pure = dilemma.pure_nash();
    assert_eq!(pure, vec![(0, 0)], "dilemma pure nash");

    let pennies = BimatrixGame::matching_pennies();
    assert!(pennies.pure_nash().is_empty(), "pennies has no pure nash");
    let mixed = pennies.mixed_nash_2x2().unwrap();
    assert!((mixed.p[0] - 0.5).abs() <= 1e-10 && (mixed.q[0] - 0.5).abs() <= 1e-10);

    let mut r = rng::substream(2024, 0);
    for _ in 0..100 {
        let c_cost = r.random::<f64>() * 5.0;
        let a = c_cost + 0.1 + r.random::<f64>() * 10.0;
        let (q1, q2) = cournot(a, c_cost).unwrap();
        let closed = (a - c_cost) / 3.0;
        assert_eq!(q1, closed, "cournot exact");
        assert_eq!(q2, closed, "cournot exact");
    }
    c.check(started, true, "table equilibria exact, cournot closed form on 100 draws".into());
}

fn criterion_2_meeting() {
    let c = Criterion { name: "2 meeting game", budget_s: 30.0 };
    let started = Instant::now();
    let spec = MeetingSpec::new(1.0, 1.0, 1.0, 9.0, DistributionSpec::dirac(1.0)).unwrap();
    let eq = meeting::solve_equilibrium(&spec, 1e-10).unwrap();
    assert!(eq.residual <= 1e-8, "residual {}", eq.residual);
    assert!(eq.contraction_estimate < 1.0);
    assert!(eq.empirical_contraction < 1.0);

    // Bisection oracle on G(T) - T.
    let g = |t: f64| spec.response_map(t).unwrap() - t;
    let (mut lo, mut hi) = (spec.t0 - 2.0, spec.t0 + 16.0);
    assert!(g(lo) > 0.0 && g(hi) < 0.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    assert!(
        (eq.t_star - oracle).abs() <= 1e-8,
        "picard {} vs bisection {}",
        eq.t_star,
        oracle
    );

    // Degenerate regime errors out by name.
    let degenerate =
        MeetingSpec::new(1e-12, 1.0, 1.0, 9.0, DistributionSpec::dirac(1.0)).unwrap();
    assert!(matches!(
        meeting::solve_equilibrium(&degenerate, 1e-12),
        Err(Error::Degenerate(_))
    ));

    // Seed-median start times approach the limit monotonically in N.
    let limit = spec
        .t0
        .max(eq.t_star + spec.noise_quantile(spec.rule_quantile).unwrap());
    let median_gap = |n: usize| {
        // Median of per-seed absolute gaps: a robust N^{-1/2} statistic.
        let mut gaps: Vec<f64> = (0..21)
            .map(|s| {
                (meeting::simulate_finite(&spec, eq.t_star, n, 9000 + s).unwrap() - limit)
                    .abs()
            })
            .collect();
        gaps.sort_by(f64::total_cmp);
        gaps[10]
    };
    let gaps = [median_gap(100), median_gap(1000), median_gap(10_000)];
    assert!(gaps[1] <= gaps[0] && gaps[2] <= gaps[1], "gaps {gaps:?}");
    c.check(
        started,
        true,
        format!("fixed point {:.6}, contraction {:.3}", eq.t_star, eq.contraction_estimate),
    );
}

fn criterion_3_measures() {
    let c = Criterion { name: "3 measures", budget_s: 30.0 };
    let started = Instant::now();
    let mut r = rng::substream(31415, 0);
    let mut random_measure = |atoms: usize| {
        let points: Vec<f64> = (0..atoms).map(|_| r.random::<f64>() * 20.0 - 10.0).collect();
        let weights: Vec<f64> = (0..atoms).map(|_| r.random::<f64>() + 0.05).collect();
        EmpiricalMeasure::from_weighted(&points, &weights).unwrap()
    };
    // Metric axioms on 10^3 random triples.
    for _ in 0..1000 {
        let a = random_measure(6);
        let b = random_measure(5);
        let cc = random_measure(7);
        let dab = wasserstein1(&a, &b);
        assert!(dab >= 0.0);
        assert!((dab - wasserstein1(&b, &a)).abs() <= 1e-10);
        assert!(dab <= wasserstein1(&a, &cc) + wasserstein1(&cc, &b) + 1e-10);
        assert!(wasserstein1(&a, &a) <= 1e-10);
    }
    // Exact CDF integration vs the brute-force transport plan on 8 atoms.
    for _ in 0..200 {
        let a = random_measure(8);
        let b = random_measure(8);
        let mut cost = 0.0;
        let (mut i, mut j) = (0usize, 0usize);
        let mut supply = a.weights()[0];
        let mut demand = b.weights()[0];
        loop {
            let moved = supply.min(demand);
            cost += moved * (a.points()[i] - b.points()[j]).abs();
            supply -= moved;
            demand -= moved;
            if supply <= 1e-15 {
                i += 1;
                if i >= a.len() {
                    break;
                }
                supply = a.weights()[i];
            }
            if demand <= 1e-15 {
                j += 1;
                if j >= b.len() {
                    break;
                }
                demand = b.weights()[j];
            }
        }
        assert!((wasserstein1(&a, &b) - cost).abs() <= 1e-10);
    }
    // Glivenko-Cantelli medians strictly decreasing over three decades.
    let reference = DistributionSpec::Normal { mean: 0.0, sd: 1.0 };
    let median_distance = |n: usize| {
        let mut dists: Vec<f64> = (0..20)
            .map(|s| {
                let mut rr = rng::substream(777, s);
                let draws: Vec<f64> = (0..n).map(|_| rng::normal(&mut rr)).collect();
                mfg_lab::measures::sup_cdf_distance(
                    &EmpiricalMeasure::from_samples(&draws).unwrap(),
                    &reference,
                )
            })
            .collect();
        dists.sort_by(f64::total_cmp);
        dists[10]
    };
    let (d2, d3, d4) = (median_distance(100), median_distance(1000), median_distance(10_000));
    assert!(d3 < d2 && d4 < d3, "medians {d2} {d3} {d4}");
    c.check(started, true, format!("metric axioms, transport oracle, GC medians {d2:.3}/{d3:.3}/{d4:.3}"));
}

fn criterion_4_mckean_vlasov() {
    let c = Criterion { name: "4 mckean-vlasov", budget_s: 300.0 };
    let started = Instant::now();

    // Driftless flow against the exact Gaussian, within the Monte Carlo floor.
    let m = 2000;
    let sigma = 1.0;
    let driftless = McKeanSpec::new(
        DriftKernel::zero(),
        sigma,
        DistributionSpec::dirac(0.0),
        1.0,
        0.01,
    )
    .unwrap();
    let solution = solve_nonlinear(&driftless, m, 1e-9, 4).unwrap();
    let gauss_atoms = |s: f64| {
        let pts: Vec<f64> = (0..m)
            .map(|i| s * rng::norm_quantile((i as f64 + 0.5) / m as f64))
            .collect();
        EmpiricalMeasure::from_samples(&pts).unwrap()
    };
    let floor = {
        let mut gaps: Vec<f64> = (0..9)
            .map(|seed| {
                let draws: Vec<f64> = rng::normal_vec(900 + seed, 0, m);
                wasserstein1(&EmpiricalMeasure::from_samples(&draws).unwrap(), &gauss_atoms(1.0))
            })
            .collect();
        gaps.sort_by(f64::total_cmp);
        gaps[4]
    };
    let mut scaled_sup = 0.0f64;
    for (k, &t) in solution.flow.times().iter().enumerate().skip(1) {
        let gap = wasserstein1(solution.flow.at(k), &gauss_atoms(sigma * t.sqrt()));
        scaled_sup = scaled_sup.max(gap / t.sqrt());
    }
    assert!(scaled_sup <= 2.0 * floor, "sup gap {scaled_sup} vs floor {floor}");

    // Linear-kernel variance vs the moment ODE at dt = 1e-3.
    let pull = McKeanSpec::new(
        DriftKernel::linear_pull(),
        0.6,
        DistributionSpec::dirac(0.0),
        1.0,
        1e-3,
    )
    .unwrap();
    let sol = solve_nonlinear(&pull, 4000, 1e-4, 9).unwrap();
    let v = sol.flow.at(sol.flow.len() - 1).variance();
    let v_ode = 0.6 * 0.6 * (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((v - v_ode).abs() <= 0.02 * v_ode, "variance {v} vs {v_ode}");

    // Chaos-gap log-log slope across three population decades.
    let chaos_solution = solve_nonlinear(&driftless, 4000, 1e-9, 2).unwrap();
    let median_gap = |n: usize| {
        let mut gaps: Vec<f64> = (0..20)
            .map(|s| {
                let ensemble = simulate_interacting(&driftless, n, 3000 + s).unwrap();
                chaos_gap(&ensemble, &chaos_solution, 1.0).unwrap()
            })
            .collect();
        gaps.sort_by(f64::total_cmp);
        gaps[10]
    };
    let gaps = [median_gap(100), median_gap(1000), median_gap(10_000)];
    let xs: Vec<f64> = [100f64, 1000.0, 10_000.0].iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = ys.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
    c.check(
        started,
        true,
        format!("gaussian floor ok, variance {v:.4} vs {v_ode:.4}, chaos slope {slope:.3}"),
    );
}

fn criterion_5_fbsde() {
    let c = Criterion { name: "5 fbsde", budget_s: 300.0 };
    let started = Instant::now();

    let instance = BlackScholesInstance::new(1.0, 1.0, 0.05, 0.1, 0.2, 1.0).unwrap();
    let spec = instance.log_space_spec();
    let oracle = instance.price();
    let solution = four_step_solve(&spec, &instance.grids(400, 400), 200, 7).unwrap();
    let rel = (solution.y0 - oracle).abs() / oracle;
    assert!(rel <= 0.005, "price error {rel}");

    let coarse = {
        let theta = solve_quasilinear_pde(&spec, &instance.grids(200, 200)).unwrap();
        (theta.eval_at_node(0, 0.0) - oracle).abs()
    };
    let fine = (solution.y0 - oracle).abs();
    assert!(coarse / fine >= 1.7, "refinement ratio {}", coarse / fine);

    // Regression solver reproduces the martingale representation of W_T.
    let brownian = fbsde::BsdeSpec::new(
        |_, _, _| 0.0,
        fbsde::Volatility::constant(1.0),
        |_, _, _, _| 0.0,
        |x| x,
        0.0,
        1.0,
        0.0,
    )
    .unwrap();
    let reg = solve_bsde_regression(&brownian, 25, 8000, 3, 42).unwrap();
    let mut pathwise = 0.0f64;
    for (xp, yp) in reg.x_paths.iter().zip(&reg.y_paths).take(500) {
        for k in 5..xp.len() {
            pathwise = pathwise.max((xp[k] - yp[k]).abs());
        }
    }
    assert!(pathwise <= 0.2, "pathwise |Y - W| {pathwise}");
    let steps = reg.times.len() - 1;
    let z_terminal: f64 = reg
        .z_paths
        .iter()
        .map(|zp| zp[steps - 1])
        .sum::<f64>()
        / reg.z_paths.len() as f64;
    assert!((z_terminal - 1.0).abs() <= 0.05, "terminal Z mean {z_terminal}");

    // Coupled linear instance: four-step vs regression within 2%.
    let coupled = linear_coupled_instance(1.0, 0.25);
    let grids = PdeGrids::new(Grid1d::new(-4.0, 6.0, 320).unwrap(), 160);
    let pde = four_step_solve(&coupled, &grids, 200, 5).unwrap();
    let reg = solve_bsde_regression_with(&coupled, 50, 20_000, 4, 5, 6).unwrap();
    let gap = (pde.y0 - reg.y0).abs() / pde.y0.abs();
    assert!(gap <= 0.02, "cross-method gap {gap}");
    c.check(
        started,
        true,
        format!("put error {:.2e}, Z mean {z_terminal:.3}, coupled gap {gap:.4}", rel),
    );
}

fn criterion_6_mfg() {
    let c = Criterion { name: "6 mean-field game", budget_s: 900.0 };
    let started = Instant::now();
    let problem = mfg::lq_mean_field(
        1.0,
        0.5,
        1.0,
        DistributionSpec::Normal { mean: 1.0, sd: 0.3 },
        6.0,
    );
    let grid = Grid1d::new(-4.0, 5.0, 360).unwrap();
    let t_steps = 200;
    let mut params = MfgPicardParams::new(grid, t_steps);
    params.atoms = 2000;
    params.tol = 2e-4;
    let eq = mfg_picard(&problem, &params, 42).unwrap();

    // Riccati-consistency oracle for the mean path (dense RK4).
    let oracle = {
        let fine = 8 * t_steps;
        let h = 1.0 / fine as f64;
        let mut eta = vec![0.0; fine + 1];
        let mut phi = vec![0.0; fine + 1];
        for k in (0..fine).rev() {
            let fe = |e: f64| e * e - 1.0;
            let fp = |e: f64, p: f64| p * p + 2.0 * e * p + 1.0;
            let (e1, p1) = (eta[k + 1], phi[k + 1]);
            let k1 = (fe(e1), fp(e1, p1));
            let k2 = (
                fe(e1 - 0.5 * h * k1.0),
                fp(e1 - 0.5 * h * k1.0, p1 - 0.5 * h * k1.1),
            );
            let k3 = (
                fe(e1 - 0.5 * h * k2.0),
                fp(e1 - 0.5 * h * k2.0, p1 - 0.5 * h * k2.1),
            );
            let k4 = (fe(e1 - h * k3.0), fp(e1 - h * k3.0, p1 - h * k3.1));
            eta[k] = e1 - h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            phi[k] = p1 - h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        let mut m = vec![1.0; fine + 1];
        for k in 0..fine {
            let rate = |j: usize| eta[j.min(fine)] + phi[j.min(fine)];
            let f = |r: f64, m: f64| -r * m;
            let k1 = f(rate(k), m[k]);
            let mid = 0.5 * (rate(k) + rate(k + 1));
            let k2 = f(mid, m[k] + 0.5 * h * k1);
            let k3 = f(mid, m[k] + 0.5 * h * k2);
            let k4 = f(rate(k + 1), m[k] + h * k3);
            m[k + 1] = m[k] + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        (0..=t_steps).map(|k| m[8 * k]).collect::<Vec<f64>>()
    };
    let sup: f64 = eq
        .flow
        .mean_path()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(sup <= 1e-3, "mean path error {sup}");

    // Analytic route agreement and mass conservation.
    let mut hjb_params = HjbFpParams::new(grid, t_steps);
    hjb_params.tol = 2e-4;
    let analytic = hjb_fp_solve(&problem, &hjb_params).unwrap();
    assert!(analytic.mass_drift <= 1e-8, "mass drift {}", analytic.mass_drift);
    let route_gap = eq.flow.sup_wasserstein1(&analytic.flow).unwrap();
    let bound = (2.0 * params.tol).max(grid.dx());
    assert!(route_gap <= bound, "route gap {route_gap} vs {bound}");

    // Variational inequality on 50 random admissible perturbations.
    let margins =
        variational_margins(&problem, &eq.flow, &eq.control_field, 50, 3000, 17).unwrap();
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(worst >= -2e-3, "worst margin {worst}");

    // Epsilon-Nash medians nonincreasing over the population ladder.
    let grids = PdeGrids::new(grid, t_steps);
    let mut medians = Vec::new();
    for &n in &[10usize, 50, 250] {
        let mut gains: Vec<f64> = (0..10)
            .map(|s| {
                epsilon_nash_estimate(&problem, &eq, &grids, n, 4000, 100 + s)
                    .unwrap()
                    .epsilon_hat
            })
            .collect();
        gains.sort_by(f64::total_cmp);
        medians.push(gains[5]);
    }
    assert!(
        medians[1] <= medians[0] && medians[2] <= medians[1],
        "epsilon medians {medians:?}"
    );
    c.check(
        started,
        true,
        format!(
            "mean error {sup:.2e}, route gap {route_gap:.2e}, VI min {worst:.2e}, eps {medians:?}"
        ),
    );
}

fn criterion_7_aiyagari() {
    let c = Criterion { name: "7 aiyagari", budget_s: 300.0 };
    let started = Instant::now();
    let spec = aiyagari::AiyagariSpec::baseline();
    let eq = aiyagari::solve_macro_odes(&spec, 1000, 1e-10).unwrap();
    assert_eq!(*eq.y_adj.last().unwrap(), 1.0, "terminal adjoint");
    assert!(eq.residual_y <= 1e-6 && eq.residual_k <= 1e-6,
        "residuals {} {}", eq.residual_y, eq.residual_k);

    let households = 10_000;
    let panel = aiyagari::simulate_panel(&spec, &eq, households, 33).unwrap();
    let n = eq.times.len() - 1;
    for node in [n / 4, n / 2, n] {
        let mean = panel.mean_capital(node);
        let stderr = panel.capital_std(node) / (households as f64).sqrt();
        assert!(
            (mean - eq.k_bar[node]).abs() <= 4.0 * stderr,
            "aggregate at node {node}"
        );
        let l_mean = panel.mean_labor(node);
        let l_stderr = panel.labor_std(node) / (households as f64).sqrt();
        assert!((l_mean - 1.0).abs() <= 4.0 * l_stderr + 1e-12, "labor at node {node}");
    }

    let mut long = spec.clone();
    long.t_end = 200.0;
    let steps = 4000;
    let eq_long = aiyagari::solve_macro_odes(&long, steps, 1e-10).unwrap();
    let k_star = long.steady_state_capital();
    let h = long.t_end / steps as f64;
    let mut max_slope = 0.0f64;
    let mut max_gap = 0.0f64;
    for i in (steps * 45 / 100)..(steps * 62 / 100) {
        max_slope = max_slope.max(((eq_long.k_bar[i + 1] - eq_long.k_bar[i]) / h).abs());
        max_gap = max_gap.max((eq_long.k_bar[i] - k_star).abs());
    }
    assert!(max_slope <= 1e-4, "turnpike slope {max_slope}");
    assert!(max_gap <= 1e-3 * k_star, "turnpike gap {max_gap}");
    c.check(
        started,
        true,
        format!(
            "residuals {:.1e}/{:.1e}, panel ok, turnpike slope {max_slope:.1e} at K* {k_star:.3}",
            eq.residual_y, eq.residual_k
        ),
    );
}

fn criterion_8_cli() {
    let c = Criterion { name: "8 cli corpus", budget_s: 600.0 };
    let started = Instant::now();
    let binary = env!("CARGO_BIN_EXE_mfg-lab");
    let configs_dir =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut names: Vec<String> = std::fs::read_dir(&configs_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.len() >= 8, "bundled corpus too small: {names:?}");

    let tmp = std::env::temp_dir().join("mfg-lab-acceptance");
    let _ = std::fs::remove_dir_all(&tmp);
    for name in &names {
        let path = configs_dir.join(name);
        let status = Command::new(binary)
            .args(["validate", "--config"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success(), "{name} failed validation");
        let mut digests = Vec::new();
        for (label, threads) in [("t1", "1"), ("t4", "4")] {
            let out = tmp.join(format!("{name}-{label}"));
            let status = Command::new(binary)
                .args(["run", "--config"])
                .arg(&path)
                .args(["--out"])
                .arg(&out)
                .env("RAYON_NUM_THREADS", threads)
                .status()
                .unwrap();
            assert!(status.success(), "{name} run failed");
            // Digest every output except the wall-time-bearing report.
            let mut listing: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read(e.path()).unwrap(),
                    )
                })
                .filter(|(n, _)| n != "report.json")
                .collect();
            listing.sort();
            digests.push(listing);
        }
        assert_eq!(
            digests[0], digests[1],
            "{name}: outputs differ across worker counts"
        );
    }
    c.check(started, true, format!("{} configs validated, ran, and matched", names.len()));
}

#[test]
fn acceptance_suite() {
    criterion_1_games();
    criterion_2_meeting();
    criterion_3_measures();
    criterion_4_mckean_vlasov();
    criterion_5_fbsde();
    criterion_6_mfg();
    criterion_7_aiyagari();
    criterion_8_cli();
}
