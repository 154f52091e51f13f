//! Scenario dispatch: run a validated configuration, write plot-ready CSV
//! and JSON outputs, and return a run report with content digests and
//! per-check pass/fail results.
//!
//! Determinism contract: the same (config, seed) produces byte-identical
//! outputs regardless of worker count; all parallel loops collect in index
//! order and reductions happen sequentially.

use crate::aiyagari;
use crate::config::*;
use crate::error::{Error, Result};
use crate::fbsde::{
    self, solve_bsde_regression_with, BlackScholesInstance, BsdeSpec,
    Grid1d, PdeGrids, Volatility,
};
use crate::games::{cournot, BimatrixGame};
use crate::mckean_vlasov::{self, DriftKernel, McKeanSpec, PolyTerm};
use crate::measures::EmpiricalMeasure;
use crate::meeting;
use crate::mfg::{self, HjbFpParams, MfgPicardParams, MfgProblem};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// One verification performed during a run.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub checks: Vec<Check>,
    pub outputs: Vec<OutputFile>,
}

impl RunReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Bundled example configurations: (name, one-line description, contents).
pub const BUNDLED_EXAMPLES: &[(&str, &str, &str)] = &[
    (
        "aiyagari_baseline.json",
        "heterogeneous-agent macro model: aggregate ODEs plus a household panel",
        include_str!("../configs/aiyagari_baseline.json"),
    ),
    (
        "black_scholes.json",
        "four-step FBSDE pricing of a European put against the closed form",
        include_str!("../configs/black_scholes.json"),
    ),
    (
        "cournot.json",
        "cournot duopoly best responses and closed-form equilibrium",
        include_str!("../configs/cournot.json"),
    ),
    (
        "crowd_mfg.json",
        "crowd-averse mean-field game solved by the maximum-principle route",
        include_str!("../configs/crowd_mfg.json"),
    ),
    (
        "linear_coupled.json",
        "coupled linear FBSDE cross-checked between the PDE and regression solvers",
        include_str!("../configs/linear_coupled.json"),
    ),
    (
        "lq_mfg.json",
        "linear-quadratic mean-field game by both routes with an epsilon-Nash table",
        include_str!("../configs/lq_mfg.json"),
    ),
    (
        "matching_pennies.json",
        "2x2 game with no pure equilibrium and the half-half mixed one",
        include_str!("../configs/matching_pennies.json"),
    ),
    (
        "meeting_basic.json",
        "meeting-start game fixed point with finite-population validation",
        include_str!("../configs/meeting_basic.json"),
    ),
    (
        "mkv_linear_pull.json",
        "interacting particles vs the nonlinear process with chaos-gap table",
        include_str!("../configs/mkv_linear_pull.json"),
    ),
    (
        "prisoners_dilemma.json",
        "dominant-strategy equilibrium of the 2x2 dilemma",
        include_str!("../configs/prisoners_dilemma.json"),
    ),
];

/// Stable, sorted manifest of the bundled configurations.
pub fn list_examples() -> Vec<(String, String)> {
    let mut rows: Vec<(String, String)> = BUNDLED_EXAMPLES
        .iter()
        .map(|(name, desc, _)| (name.to_string(), desc.to_string()))
        .collect();
    rows.sort();
    rows
}

struct OutputSink {
    dir: PathBuf,
    outputs: Vec<OutputFile>,
}

impl OutputSink {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputSink {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents.as_bytes())?;
        let digest = Sha256::digest(contents.as_bytes());
        self.outputs.push(OutputFile {
            path: name.to_string(),
            sha256: hex_string(&digest),
            bytes: contents.len(),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }

    fn write_csv(&mut self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<()> {
        let mut text = String::with_capacity(rows.len() * 32);
        text.push_str(header);
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, &text)
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Run a validated scenario, writing outputs under `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let started = Instant::now();
    let mut sink = OutputSink::new(out_dir)?;
    let seed = cfg.seed;
    let (scenario, checks) = if let Some(c) = &cfg.games {
        ("games", run_games(c, &mut sink)?)
    } else if let Some(c) = &cfg.meeting {
        ("meeting", run_meeting(c, c.seed.unwrap_or(seed), &mut sink)?)
    } else if let Some(c) = &cfg.mkv {
        ("mkv", run_mkv(c, c.seed.unwrap_or(seed), &mut sink)?)
    } else if let Some(c) = &cfg.fbsde {
        ("fbsde", run_fbsde(c, c.seed.unwrap_or(seed), &mut sink)?)
    } else if let Some(c) = &cfg.mfg {
        ("mfg", run_mfg(c, c.seed.unwrap_or(seed), &mut sink)?)
    } else if let Some(c) = &cfg.aiyagari {
        ("aiyagari", run_aiyagari(c, c.seed.unwrap_or(seed), &mut sink)?)
    } else {
        return Err(Error::Config(vec!["scenario: no kind block".into()]));
    };

    let report = RunReport {
        scenario: scenario.into(),
        seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        checks,
        outputs: sink.outputs.clone(),
    };
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Internal(format!("report serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(out_dir.join("report.json"), text)?;
    Ok(report)
}

fn run_games(cfg: &GamesConfig, sink: &mut OutputSink) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    #[derive(Serialize)]
    struct GamesSummary {
        #[serde(skip_serializing_if = "Option::is_none")]
        pure_nash: Option<Vec<(usize, usize)>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        mixed_p: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        mixed_q: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        deviation_gain: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        q1: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        q2: Option<f64>,
    }
    let mut summary = GamesSummary {
        pure_nash: None,
        mixed_p: None,
        mixed_q: None,
        deviation_gain: None,
        q1: None,
        q2: None,
    };
    if let Some(bim) = &cfg.bimatrix {
        let game = match bim.preset.as_deref() {
            Some("prisoners_dilemma") => BimatrixGame::prisoners_dilemma(),
            Some("matching_pennies") => BimatrixGame::matching_pennies(),
            _ => BimatrixGame::new(
                bim.payoff1.clone().unwrap_or_default(),
                bim.payoff2.clone().unwrap_or_default(),
            )?,
        };
        summary.pure_nash = Some(game.pure_nash());
        if game.rows() == 2 && game.cols() == 2 {
            let mixed = game.mixed_nash_2x2()?;
            let gain = game.deviation_gain(&mixed);
            checks.push(Check::new(
                "mixed_equilibrium_deviation_gain",
                gain <= 1e-10,
                format!("unilateral gain {gain:.3e}"),
            ));
            summary.mixed_p = Some(mixed.p.clone());
            summary.mixed_q = Some(mixed.q.clone());
            summary.deviation_gain = Some(gain);
        }
    }
    if let Some(c) = &cfg.cournot {
        let (q1, q2) = cournot(c.a, c.c)?;
        let closed = (c.a - c.c) / 3.0;
        checks.push(Check::new(
            "cournot_closed_form",
            q1 == closed && q2 == closed,
            format!("q = ({q1}, {q2}), closed form {closed}"),
        ));
        summary.q1 = Some(q1);
        summary.q2 = Some(q2);
    }
    sink.write_json("games.json", &summary)?;
    Ok(checks)
}

fn run_meeting(cfg: &MeetingConfig, seed: u64, sink: &mut OutputSink) -> Result<Vec<Check>> {
    let spec = cfg.to_spec()?;
    let eq = if cfg.self_consistent {
        meeting::solve_equilibrium_self_consistent(&spec, cfg.tol)?
    } else {
        meeting::solve_equilibrium(&spec, cfg.tol)?
    };
    let mut rows = Vec::new();
    for (i, (t, residual)) in eq.iterates.iter().enumerate() {
        rows.push(vec![format!("{}", i + 1), fmt(*t), fmt(*residual)]);
    }
    sink.write_csv("meeting_iterates.csv", "iteration,T,residual", &rows)?;

    let mut table = Vec::new();
    for &n in &cfg.n_list {
        let starts: Vec<f64> = (0..cfg.seeds)
            .map(|s| meeting::simulate_finite(&spec, eq.t_star, n, seed.wrapping_add(s as u64)))
            .collect::<Result<_>>()?;
        let mean = starts.iter().sum::<f64>() / starts.len() as f64;
        let std = (starts.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / starts.len() as f64)
            .sqrt();
        table.push(vec![format!("{n}"), fmt(mean), fmt(std)]);
    }
    sink.write_csv("meeting_finite.csv", "N,mean_start,std_start", &table)?;

    #[derive(Serialize)]
    struct MeetingSummary {
        t_star: f64,
        residual: f64,
        iterations: usize,
        contraction_estimate: f64,
        empirical_contraction: f64,
    }
    sink.write_json(
        "meeting.json",
        &MeetingSummary {
            t_star: eq.t_star,
            residual: eq.residual,
            iterations: eq.iterations,
            contraction_estimate: eq.contraction_estimate,
            empirical_contraction: eq.empirical_contraction,
        },
    )?;
    Ok(vec![
        Check::new(
            "fixed_point_residual",
            eq.residual <= cfg.tol,
            format!("|G(T*) - T*| = {:.3e}", eq.residual),
        ),
        Check::new(
            "contraction_below_one",
            eq.contraction_estimate < 1.0,
            format!("lambda = {:.6}", eq.contraction_estimate),
        ),
    ])
}

fn kernel_from_config(cfg: &KernelConfig) -> Result<DriftKernel> {
    Ok(match cfg.name.as_str() {
        "zero" => DriftKernel::zero(),
        "ou" => DriftKernel::ou(),
        "linear_pull" => DriftKernel::linear_pull(),
        "polynomial" => {
            let terms = cfg
                .terms
                .as_ref()
                .ok_or_else(|| Error::invalid("polynomial kernel needs terms"))?
                .iter()
                .map(|&(own_pow, other_pow, coef)| PolyTerm {
                    own_pow,
                    other_pow,
                    coef,
                })
                .collect();
            DriftKernel::polynomial(
                terms,
                cfg.lipschitz
                    .ok_or_else(|| Error::invalid("polynomial kernel needs a bound"))?,
            )
        }
        other => return Err(Error::invalid(format!("unknown kernel `{other}`"))),
    })
}

fn quantile_row(t: f64, m: &EmpiricalMeasure) -> Vec<String> {
    let q = |p: f64| fmt(m.quantile(p).expect("quantile in range"));
    vec![fmt(t), q(0.05), q(0.25), q(0.5), q(0.75), q(0.95)]
}

fn run_mkv(cfg: &MkvConfig, seed: u64, sink: &mut OutputSink) -> Result<Vec<Check>> {
    let kernel = kernel_from_config(&cfg.kernel)?;
    let spec = McKeanSpec::new(kernel, cfg.sigma, cfg.mu0.clone(), cfg.t_end, cfg.dt)?;
    let solution = mckean_vlasov::solve_nonlinear(&spec, cfg.m, cfg.tol, seed)?;

    let rows: Vec<Vec<String>> = solution
        .flow
        .times()
        .iter()
        .zip(solution.flow.measures())
        .map(|(&t, m)| quantile_row(t, m))
        .collect();
    sink.write_csv("mkv_flow.csv", "t,q05,q25,q50,q75,q95", &rows)?;

    let mut chaos_rows = Vec::new();
    let mut medians = Vec::new();
    for &n in &cfg.n_list {
        let mut gaps: Vec<f64> = (0..cfg.chaos_seeds)
            .map(|s| {
                let ensemble = mckean_vlasov::simulate_interacting(
                    &spec,
                    n,
                    seed.wrapping_add(1000 + s as u64),
                )?;
                mckean_vlasov::chaos_gap(&ensemble, &solution, cfg.t_end)
            })
            .collect::<Result<_>>()?;
        gaps.sort_by(f64::total_cmp);
        let median = gaps[gaps.len() / 2];
        medians.push(median);
        chaos_rows.push(vec![format!("{n}"), fmt(median)]);
    }
    sink.write_csv("mkv_chaos.csv", "N,gap_median", &chaos_rows)?;

    #[derive(Serialize)]
    struct MkvSummary {
        picard_iterations: usize,
        picard_residuals: Vec<f64>,
        chaos_gap_medians: Vec<f64>,
    }
    sink.write_json(
        "mkv.json",
        &MkvSummary {
            picard_iterations: solution.picard_residuals.len(),
            picard_residuals: solution.picard_residuals.clone(),
            chaos_gap_medians: medians.clone(),
        },
    )?;
    let mut checks = vec![Check::new(
        "nonlinear_process_converged",
        *solution.picard_residuals.last().unwrap() <= cfg.tol,
        format!("last residual {:.3e}", solution.picard_residuals.last().unwrap()),
    )];
    if medians.len() >= 2 {
        let shrinking = medians.windows(2).all(|w| w[1] <= w[0]);
        checks.push(Check::new(
            "chaos_gap_shrinks_with_population",
            shrinking,
            format!("medians {medians:?}"),
        ));
    }
    Ok(checks)
}

fn custom_fbsde_spec(
    drift: &[(u32, u32, f64)],
    vol: &[(u32, u32, f64)],
    driver: &[(u32, u32, u32, f64)],
    terminal: &TerminalConfig,
    x0: f64,
    t_end: f64,
    lipschitz: f64,
) -> Result<BsdeSpec> {
    let eval2 = |terms: Vec<(u32, u32, f64)>| {
        move |x: f64, y: f64| -> f64 {
            terms
                .iter()
                .map(|&(xp, yp, c)| c * x.powi(xp as i32) * y.powi(yp as i32))
                .sum()
        }
    };
    let drift_fn = eval2(drift.to_vec());
    let vol_fn = eval2(vol.to_vec());
    let driver_terms = driver.to_vec();
    let terminal_fn = terminal.to_fn();
    BsdeSpec::new(
        move |_, x, y| drift_fn(x, y),
        Volatility::of(move |_, x, y| vol_fn(x, y)),
        move |_, x, y, z| {
            driver_terms
                .iter()
                .map(|&(xp, yp, zp, c)| {
                    c * x.powi(xp as i32) * y.powi(yp as i32) * z.powi(zp as i32)
                })
                .sum()
        },
        terminal_fn,
        x0,
        t_end,
        lipschitz,
    )
}

fn run_fbsde(cfg: &FbsdeConfig, seed: u64, sink: &mut OutputSink) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let (spec, grids, oracle): (BsdeSpec, PdeGrids, Option<f64>) = match &cfg.instance {
        FbsdeInstance::BlackScholes {
            s0,
            strike,
            rate,
            mu,
            sigma,
            t_end,
        } => {
            let instance = BlackScholesInstance::new(*s0, *strike, *rate, *mu, *sigma, *t_end)?;
            (
                instance.log_space_spec(),
                instance.grids(cfg.x_steps, cfg.t_steps),
                Some(instance.price()),
            )
        }
        FbsdeInstance::LinearCoupled { x0, t_end } => {
            let spec = fbsde::linear_coupled_instance(*x0, *t_end);
            let half = cfg.x_halfwidth.unwrap_or(6.0);
            let grids = PdeGrids::new(
                Grid1d::new(x0 - half, x0 + half, cfg.x_steps)?,
                cfg.t_steps,
            );
            (spec, grids, None)
        }
        FbsdeInstance::Custom {
            drift,
            vol,
            driver,
            terminal,
            x0,
            t_end,
            lipschitz,
        } => {
            let spec = custom_fbsde_spec(drift, vol, driver, terminal, *x0, *t_end, *lipschitz)?;
            let half = cfg.x_halfwidth.unwrap_or(6.0);
            let grids = PdeGrids::new(
                Grid1d::new(x0 - half, x0 + half, cfg.x_steps)?,
                cfg.t_steps,
            );
            (spec, grids, None)
        }
    };

    let mut y0_pde = None;
    let mut y0_reg = None;
    let mut terminal_consistency = None;
    if matches!(cfg.method.as_str(), "four_step" | "both") {
        let solution = fbsde::four_step_solve(&spec, &grids, cfg.paths, seed)?;
        terminal_consistency = Some(solution.terminal_consistency);
        // Decoupling-field slices at t = 0 and t = T/2.
        let theta = &solution.theta;
        let mid = theta.t_grid.len() / 2;
        let rows: Vec<Vec<String>> = theta
            .x_grid
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                vec![
                    fmt(x),
                    fmt(theta.node_value(0, i)),
                    fmt(theta.node_value(mid, i)),
                ]
            })
            .collect();
        sink.write_csv("fbsde_theta.csv", "x,theta_t0,theta_mid", &rows)?;
        y0_pde = Some(solution.y0);
    }
    if matches!(cfg.method.as_str(), "regression" | "both") {
        let solution = solve_bsde_regression_with(
            &spec,
            cfg.t_steps.min(64),
            cfg.regression_paths.unwrap_or(20_000),
            cfg.basis_degree.unwrap_or(4),
            seed,
            cfg.resim_iterations.unwrap_or(1),
        )?;
        y0_reg = Some(solution.y0);
    }

    let oracle_error = match (oracle, y0_pde.or(y0_reg)) {
        (Some(price), Some(y0)) => Some((y0 - price).abs() / price),
        _ => None,
    };
    if let Some(err) = oracle_error {
        checks.push(Check::new(
            "closed_form_relative_error",
            err <= 0.005,
            format!("relative error {err:.5}"),
        ));
    }
    if let (Some(a), Some(b)) = (y0_pde, y0_reg) {
        let gap = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        checks.push(Check::new(
            "cross_method_agreement",
            gap <= 0.02,
            format!("four-step {a}, regression {b}, relative gap {gap:.5}"),
        ));
    }

    #[derive(Serialize)]
    struct FbsdeSummary {
        #[serde(skip_serializing_if = "Option::is_none")]
        y0_four_step: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        y0_regression: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        terminal_consistency: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        oracle_price: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        oracle_error: Option<f64>,
    }
    sink.write_json(
        "fbsde.json",
        &FbsdeSummary {
            y0_four_step: y0_pde,
            y0_regression: y0_reg,
            terminal_consistency,
            oracle_price: oracle,
            oracle_error,
        },
    )?;
    Ok(checks)
}

fn problem_from_preset(preset: &MfgPreset) -> MfgProblem {
    match preset {
        MfgPreset::LqMeanField {
            coupling,
            sigma,
            t_end,
            mu0,
            action_bound,
        } => mfg::lq_mean_field(*coupling, *sigma, *t_end, mu0.clone(), *action_bound),
        MfgPreset::CrowdAversion {
            weight,
            bandwidth,
            sigma,
            t_end,
            mu0,
            action_bound,
        } => mfg::crowd_aversion(
            *weight,
            *bandwidth,
            *sigma,
            *t_end,
            mu0.clone(),
            *action_bound,
        ),
    }
}

fn run_mfg(cfg: &MfgConfig, seed: u64, sink: &mut OutputSink) -> Result<Vec<Check>> {
    let problem = problem_from_preset(&cfg.preset);
    problem.spot_check_bounds(seed)?;
    let grid = Grid1d::new(cfg.x_lo, cfg.x_hi, cfg.x_steps)?;
    let mut checks = Vec::new();

    let mut smp_eq = None;
    let mut hjb_sol = None;
    if matches!(cfg.method.as_str(), "smp" | "both") {
        let mut params = MfgPicardParams::new(grid, cfg.t_steps);
        params.atoms = cfg.atoms;
        params.damping = cfg.damping;
        params.tol = cfg.tol;
        params.max_iters = cfg.max_iters;
        params.fictitious_play = cfg.fictitious_play;
        let eq = mfg::mfg_picard(&problem, &params, seed)?;
        checks.push(Check::new(
            "smp_consistency_gap",
            eq.consistency_gap <= 2.0 * cfg.tol,
            format!("sup_t W1 gap {:.3e}", eq.consistency_gap),
        ));
        checks.push(Check::new(
            "decoupling_field_bounds",
            eq.growth_constant.is_finite() && eq.lipschitz_constant.is_finite(),
            format!(
                "growth {:.3}, lipschitz {:.3}, control bound {:.3}",
                eq.growth_constant, eq.lipschitz_constant, eq.control_bound
            ),
        ));
        smp_eq = Some(eq);
    }
    if matches!(cfg.method.as_str(), "hjb_fp" | "both") {
        let mut params = HjbFpParams::new(grid, cfg.t_steps);
        params.damping = cfg.damping;
        params.tol = cfg.tol;
        params.max_iters = cfg.max_iters;
        let sol = mfg::hjb_fp_solve(&problem, &params)?;
        checks.push(Check::new(
            "fp_mass_conserved",
            sol.mass_drift <= 1e-8,
            format!("max |mass - 1| = {:.3e}", sol.mass_drift),
        ));
        hjb_sol = Some(sol);
    }
    if let (Some(eq), Some(sol)) = (&smp_eq, &hjb_sol) {
        let gap = eq.flow.sup_wasserstein1(&sol.flow)?;
        let bound = (2.0 * cfg.tol).max(grid.dx());
        checks.push(Check::new(
            "cross_route_flow_agreement",
            gap <= bound,
            format!("sup_t W1 = {gap:.4e}, bound {bound:.4e}"),
        ));
    }

    let flow = smp_eq
        .as_ref()
        .map(|eq| &eq.flow)
        .or(hjb_sol.as_ref().map(|s| &s.flow))
        .expect("method produced a flow");
    let rows: Vec<Vec<String>> = flow
        .times()
        .iter()
        .zip(flow.measures())
        .map(|(&t, m)| quantile_row(t, m))
        .collect();
    sink.write_csv("mfg_flow.csv", "t,q05,q25,q50,q75,q95", &rows)?;

    let mut epsilon_table = Vec::new();
    if let (Some(eq), Some(eps)) = (&smp_eq, &cfg.epsilon) {
        let grids = PdeGrids::new(grid, cfg.t_steps);
        for &n in &eps.n_list {
            let mut gains: Vec<f64> = (0..eps.seeds)
                .map(|s| {
                    mfg::epsilon_nash_estimate(
                        &problem,
                        eq,
                        &grids,
                        n,
                        eps.paths,
                        seed.wrapping_add(7000 + s as u64),
                    )
                    .map(|e| e.epsilon_hat)
                })
                .collect::<Result<_>>()?;
            gains.sort_by(f64::total_cmp);
            epsilon_table.push((n, gains[gains.len() / 2]));
        }
        let monotone = epsilon_table.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
        checks.push(Check::new(
            "epsilon_nonincreasing_in_population",
            monotone,
            format!("{epsilon_table:?}"),
        ));
    }

    #[derive(Serialize)]
    struct MfgSummary {
        #[serde(skip_serializing_if = "Option::is_none")]
        smp_iterations: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        smp_residuals: Option<Vec<f64>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        smp_consistency_gap: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        hjb_iterations: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        hjb_residuals: Option<Vec<f64>>,
        epsilon_table: Vec<(usize, f64)>,
    }
    sink.write_json(
        "mfg.json",
        &MfgSummary {
            smp_iterations: smp_eq.as_ref().map(|e| e.iterations),
            smp_residuals: smp_eq.as_ref().map(|e| e.residual_history.clone()),
            smp_consistency_gap: smp_eq.as_ref().map(|e| e.consistency_gap),
            hjb_iterations: hjb_sol.as_ref().map(|s| s.iterations),
            hjb_residuals: hjb_sol.as_ref().map(|s| s.residual_history.clone()),
            epsilon_table,
        },
    )?;
    Ok(checks)
}

fn run_aiyagari(cfg: &AiyagariConfig, seed: u64, sink: &mut OutputSink) -> Result<Vec<Check>> {
    let spec = cfg.to_spec();
    let eq = aiyagari::solve_macro_odes(&spec, cfg.steps, cfg.tol)?;
    let rows: Vec<Vec<String>> = (0..eq.times.len())
        .map(|i| {
            vec![
                fmt(eq.times[i]),
                fmt(eq.k_bar[i]),
                fmt(eq.y_adj[i]),
                fmt(eq.r[i]),
                fmt(eq.w[i]),
                fmt(eq.c_rule[i]),
            ]
        })
        .collect();
    sink.write_csv("aiyagari.csv", "t,K_bar,Y,r,w,c_hat", &rows)?;

    let panel = aiyagari::simulate_panel(&spec, &eq, cfg.households, seed)?;
    let n = eq.times.len() - 1;
    let checkpoints = [n / 4, n / 2, n];
    #[derive(Serialize)]
    struct PanelCheckpoint {
        t: f64,
        k_bar_ode: f64,
        k_mean_panel: f64,
        k_std_panel: f64,
        labor_mean: f64,
    }
    let mut aggregate_ok = true;
    let mut labor_ok = true;
    let mut rows = Vec::new();
    for &node in &checkpoints {
        let k_mean = panel.mean_capital(node);
        let k_std = panel.capital_std(node);
        let l_mean = panel.mean_labor(node);
        let l_std = panel.labor_std(node);
        let households = cfg.households as f64;
        if (k_mean - eq.k_bar[node]).abs() > 4.0 * k_std / households.sqrt() + 1e-9 {
            aggregate_ok = false;
        }
        if (l_mean - 1.0).abs() > 4.0 * l_std / households.sqrt() + 1e-9 {
            labor_ok = false;
        }
        rows.push(PanelCheckpoint {
            t: eq.times[node],
            k_bar_ode: eq.k_bar[node],
            k_mean_panel: k_mean,
            k_std_panel: k_std,
            labor_mean: l_mean,
        });
    }
    #[derive(Serialize)]
    struct PanelSummary {
        checkpoints: Vec<PanelCheckpoint>,
        constraint_hits: usize,
        residual_y: f64,
        residual_k: f64,
        phi: f64,
        shooting_iterations: usize,
    }
    sink.write_json(
        "aiyagari_panel.json",
        &PanelSummary {
            checkpoints: rows,
            constraint_hits: panel.constraint_hits,
            residual_y: eq.residual_y,
            residual_k: eq.residual_k,
            phi: eq.phi,
            shooting_iterations: eq.iterations,
        },
    )?;
    Ok(vec![
        Check::new(
            "terminal_adjoint_is_one",
            *eq.y_adj.last().unwrap() == 1.0,
            format!("Y(T) = {}", eq.y_adj.last().unwrap()),
        ),
        Check::new(
            "ode_residuals",
            eq.residual_y <= 1e-6 && eq.residual_k <= 1e-6,
            format!("residual_y {:.3e}, residual_k {:.3e}", eq.residual_y, eq.residual_k),
        ),
        Check::new(
            "panel_aggregate_consistency",
            aggregate_ok,
            "mean panel capital within 4 stderr of the ODE path".into(),
        ),
        Check::new(
            "panel_labor_normalization",
            labor_ok,
            "mean labor within 4 stderr of one".into(),
        ),
    ])
}

/// Canonical contents of the bundled configurations, used both to
/// regenerate the files and to pin their serialized form in tests.
#[doc(hidden)]
pub fn canonical_examples() -> Vec<(&'static str, ScenarioConfig)> {
    use crate::measures::DistributionSpec;
    let blank = ScenarioConfig {
        seed: 0,
        out_dir: None,
        games: None,
        meeting: None,
        mkv: None,
        fbsde: None,
        mfg: None,
        aiyagari: None,
    };
    let mut out = Vec::new();

    out.push((
        "cournot.json",
        ScenarioConfig {
            seed: 1,
            games: Some(GamesConfig {
                bimatrix: None,
                cournot: Some(CournotConfig { a: 4.0, c: 1.0 }),
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "prisoners_dilemma.json",
        ScenarioConfig {
            seed: 1,
            games: Some(GamesConfig {
                bimatrix: Some(BimatrixConfig {
                    preset: Some("prisoners_dilemma".into()),
                    payoff1: None,
                    payoff2: None,
                }),
                cournot: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "matching_pennies.json",
        ScenarioConfig {
            seed: 1,
            games: Some(GamesConfig {
                bimatrix: Some(BimatrixConfig {
                    preset: Some("matching_pennies".into()),
                    payoff1: None,
                    payoff2: None,
                }),
                cournot: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "meeting_basic.json",
        ScenarioConfig {
            seed: 11,
            meeting: Some(MeetingConfig {
                a: 1.0,
                b: 1.0,
                c: 1.0,
                t0: 9.0,
                quantile: 0.75,
                t_end: 24.0,
                nu: DistributionSpec::AtomMixture {
                    points: vec![1.0],
                    weights: vec![1.0],
                },
                tol: 1e-10,
                n_list: vec![100, 1000, 10000],
                seeds: 7,
                seed: None,
                self_consistent: false,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "mkv_linear_pull.json",
        ScenarioConfig {
            seed: 5,
            mkv: Some(MkvConfig {
                kernel: KernelConfig {
                    name: "linear_pull".into(),
                    terms: None,
                    lipschitz: None,
                },
                sigma: 0.6,
                mu0: DistributionSpec::Normal { mean: 1.0, sd: 0.5 },
                t_end: 1.0,
                dt: 0.01,
                n: 1000,
                m: 400,
                tol: 2e-3,
                n_list: vec![100, 1000],
                chaos_seeds: 5,
                seed: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "black_scholes.json",
        ScenarioConfig {
            seed: 3,
            fbsde: Some(FbsdeConfig {
                instance: FbsdeInstance::BlackScholes {
                    s0: 1.0,
                    strike: 1.0,
                    rate: 0.05,
                    mu: 0.1,
                    sigma: 0.2,
                    t_end: 1.0,
                },
                x_steps: 400,
                t_steps: 400,
                x_halfwidth: None,
                paths: 2000,
                method: "four_step".into(),
                basis_degree: None,
                regression_paths: None,
                resim_iterations: None,
                seed: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "linear_coupled.json",
        ScenarioConfig {
            seed: 3,
            fbsde: Some(FbsdeConfig {
                instance: FbsdeInstance::LinearCoupled {
                    x0: 1.0,
                    t_end: 0.25,
                },
                x_steps: 320,
                t_steps: 160,
                x_halfwidth: Some(5.0),
                paths: 1000,
                method: "both".into(),
                basis_degree: Some(4),
                regression_paths: Some(20000),
                resim_iterations: Some(6),
                seed: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "lq_mfg.json",
        ScenarioConfig {
            seed: 9,
            mfg: Some(MfgConfig {
                preset: MfgPreset::LqMeanField {
                    coupling: 1.0,
                    sigma: 0.5,
                    t_end: 1.0,
                    mu0: DistributionSpec::Normal { mean: 1.0, sd: 0.3 },
                    action_bound: 6.0,
                },
                method: "both".into(),
                x_lo: -4.0,
                x_hi: 5.0,
                x_steps: 240,
                t_steps: 100,
                atoms: 1000,
                damping: 1.0,
                tol: 1e-3,
                max_iters: 60,
                fictitious_play: false,
                epsilon: Some(EpsilonConfig {
                    n_list: vec![10, 50],
                    paths: 800,
                    seeds: 2,
                }),
                seed: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "crowd_mfg.json",
        ScenarioConfig {
            seed: 9,
            mfg: Some(MfgConfig {
                preset: MfgPreset::CrowdAversion {
                    weight: 0.5,
                    bandwidth: 0.25,
                    sigma: 0.5,
                    t_end: 1.0,
                    mu0: DistributionSpec::Normal { mean: 0.0, sd: 0.4 },
                    action_bound: 2.0,
                },
                method: "smp".into(),
                x_lo: -3.5,
                x_hi: 3.5,
                x_steps: 160,
                t_steps: 60,
                atoms: 600,
                damping: 0.35,
                tol: 2e-3,
                max_iters: 80,
                fictitious_play: false,
                epsilon: None,
                seed: None,
            }),
            ..blank.clone()
        },
    ));
    out.push((
        "aiyagari_baseline.json",
        ScenarioConfig {
            seed: 21,
            aiyagari: Some(AiyagariConfig {
                gamma: 2.0,
                alpha_share: 0.36,
                delta: 0.08,
                beta: 0.05,
                b_limit: 0.0,
                labor: crate::aiyagari::LaborSpec {
                    kind: crate::aiyagari::LaborKind::Ou,
                    vol: 0.4,
                    reversion: 2.0,
                },
                l_min: 0.2,
                l_max: 1.8,
                t_end: 50.0,
                k0: 4.0,
                foc_convention: crate::aiyagari::WageConvention::Derived,
                paper_exact_ode: false,
                printed_aggregate: false,
                include_beta: true,
                steps: 1000,
                tol: 1e-10,
                households: 2000,
                seed: None,
            }),
            ..blank
        },
    ));
    out.sort_by(|a, b| a.0.cmp(b.0));
    out
}
