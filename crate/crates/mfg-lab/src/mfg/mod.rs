//! Mean-field game equilibria for the representative-agent problem.
//!
//! The agent controls `dX = (b0(t, mu) + b1(t) X + b2(t) a) dt + sigma dW`
//! to minimize running plus terminal costs that may read the population
//! measure. Two solution routes are implemented:
//!
//! * the stochastic-maximum-principle route ([`mfg_picard`]): the agent's
//!   optimality FBSDE is decoupled through the quasilinear PDE (so the
//!   costate is `Y = u(t, X)`), the optimal feedback is the pointwise
//!   Hamiltonian minimizer, and the population measure flow is driven to a
//!   fixed point of the best-response map by damped Picard iteration on
//!   empirical measures;
//! * the analytic route ([`hjb_fp::hjb_fp_solve`]): a value-function HJB
//!   solve coupled to a mass-conservative Fokker-Planck march.
//!
//! [`epsilon_nash::epsilon_nash_estimate`] measures how close the infinite-
//! game feedback is to a Nash equilibrium of the induced N-player game.

pub mod epsilon_nash;
pub mod hjb_fp;

pub use epsilon_nash::{epsilon_nash_estimate, EpsilonNashEstimate};
pub use hjb_fp::{hjb_fp_solve, HjbFpParams, HjbFpSolution};

use crate::error::{Error, Result};
use crate::fbsde::pde::{Grid1d, GridFunction, PdeGrids};
use crate::fbsde::{four_step_solve, solve_quasilinear_pde, BsdeSpec, FbsdeSolution, Volatility};
use crate::measures::{uniform_grid, DistributionSpec, EmpiricalMeasure, MeasureFlow};
use crate::rng;
use rayon::prelude::*;
use std::sync::Arc;

pub type MeasureCoefFn = Arc<dyn Fn(f64, &EmpiricalMeasure) -> f64 + Send + Sync>;
pub type TimeCoefFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, f64, &EmpiricalMeasure, f64) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(f64, &EmpiricalMeasure) -> f64 + Send + Sync>;

/// Coefficients, costs and bound constants of the representative-agent
/// problem. Drift is affine in state and control; the running cost is
/// strongly convex in the control with modulus `convexity`.
#[derive(Clone)]
pub struct MfgProblem {
    /// b0(t, mu): mean-field drift component.
    pub drift_mean_field: MeasureCoefFn,
    /// b1(t): state drift coefficient.
    pub drift_state: TimeCoefFn,
    /// b2(t): control drift coefficient.
    pub drift_control: TimeCoefFn,
    /// f(t, x, mu, a): running cost.
    pub running_cost: RunningCostFn,
    /// Analytic df/dx when available; central differences otherwise.
    pub running_cost_dx: Option<RunningCostFn>,
    /// Analytic df/da when available.
    pub running_cost_da: Option<RunningCostFn>,
    /// g(x, mu): terminal cost.
    pub terminal_cost: TerminalCostFn,
    /// Analytic dg/dx when available.
    pub terminal_cost_dx: Option<TerminalCostFn>,
    pub sigma: f64,
    pub action_min: f64,
    pub action_max: f64,
    pub mu0: DistributionSpec,
    pub t_end: f64,
    /// c_L: bound on the drift coefficients.
    pub drift_bound: f64,
    /// c_B: bound on cost gradients over the working domain.
    pub cost_grad_bound: f64,
    /// lambda: strong convexity modulus of the running cost in the control.
    pub convexity: f64,
    pub name: String,
}

impl std::fmt::Debug for MfgProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "MfgProblem({}, sigma={}, A=[{},{}], T={})",
            self.name, self.sigma, self.action_min, self.action_max, self.t_end
        )
    }
}

const FD_STEP: f64 = 1e-6;

impl MfgProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.action_max > self.action_min)
            || !self.action_min.is_finite()
            || !self.action_max.is_finite()
        {
            return Err(Error::invalid("action interval must be nonempty and bounded"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("volatility must be positive"));
        }
        if !(self.t_end > 0.0) || !(self.convexity > 0.0) {
            return Err(Error::invalid("need positive horizon and convexity modulus"));
        }
        self.mu0.validate()
    }

    /// Spot-check the declared coefficient bounds on random inputs.
    pub fn spot_check_bounds(&self, seed: u64) -> Result<()> {
        let mut r = rng::substream(seed, 0);
        let atoms = self.mu0.to_atoms(64)?;
        for _ in 0..200 {
            let t = rand::Rng::random::<f64>(&mut r) * self.t_end;
            if (self.drift_state)(t).abs() > self.drift_bound + 1e-9
                || (self.drift_control)(t).abs() > self.drift_bound + 1e-9
                || (self.drift_mean_field)(t, &atoms).abs() > self.drift_bound + 1e-9
            {
                return Err(Error::invalid(format!(
                    "drift coefficients exceed the declared bound {} at t = {t}",
                    self.drift_bound
                )));
            }
        }
        Ok(())
    }

    pub fn drift(&self, t: f64, x: f64, mu: &EmpiricalMeasure, a: f64) -> f64 {
        (self.drift_mean_field)(t, mu) + (self.drift_state)(t) * x + (self.drift_control)(t) * a
    }

    pub fn running_cost_dx(&self, t: f64, x: f64, mu: &EmpiricalMeasure, a: f64) -> f64 {
        match &self.running_cost_dx {
            Some(f) => f(t, x, mu, a),
            None => {
                let h = FD_STEP * (1.0 + x.abs());
                ((self.running_cost)(t, x + h, mu, a) - (self.running_cost)(t, x - h, mu, a))
                    / (2.0 * h)
            }
        }
    }

    pub fn running_cost_da(&self, t: f64, x: f64, mu: &EmpiricalMeasure, a: f64) -> f64 {
        match &self.running_cost_da {
            Some(f) => f(t, x, mu, a),
            None => {
                let h = FD_STEP * (1.0 + a.abs());
                ((self.running_cost)(t, x, mu, a + h) - (self.running_cost)(t, x, mu, a - h))
                    / (2.0 * h)
            }
        }
    }

    pub fn terminal_cost_dx(&self, x: f64, mu: &EmpiricalMeasure) -> f64 {
        match &self.terminal_cost_dx {
            Some(f) => f(x, mu),
            None => {
                let h = FD_STEP * (1.0 + x.abs());
                ((self.terminal_cost)(x + h, mu) - (self.terminal_cost)(x - h, mu)) / (2.0 * h)
            }
        }
    }

    /// The control Hamiltonian `H = b . y + f`.
    pub fn hamiltonian(
        &self,
        t: f64,
        x: f64,
        mu: &EmpiricalMeasure,
        y: f64,
        a: f64,
    ) -> Result<f64> {
        if !(self.action_min..=self.action_max).contains(&a) {
            return Err(Error::invalid(format!(
                "action {a} outside [{}, {}]",
                self.action_min, self.action_max
            )));
        }
        Ok(self.drift(t, x, mu, a) * y + (self.running_cost)(t, x, mu, a))
    }

    /// x-derivative of the Hamiltonian at the given action.
    pub fn hamiltonian_dx(&self, t: f64, x: f64, mu: &EmpiricalMeasure, y: f64, a: f64) -> f64 {
        (self.drift_state)(t) * y + self.running_cost_dx(t, x, mu, a)
    }

    /// Unique Hamiltonian minimizer over the compact action interval, by
    /// bisection on the (strictly increasing) action derivative with
    /// boundary clamping.
    pub fn argmin_hamiltonian(&self, t: f64, x: f64, mu: &EmpiricalMeasure, y: f64) -> f64 {
        let b2 = (self.drift_control)(t);
        let slope = |a: f64| b2 * y + self.running_cost_da(t, x, mu, a);
        if slope(self.action_min) >= 0.0 {
            return self.action_min;
        }
        if slope(self.action_max) <= 0.0 {
            return self.action_max;
        }
        let (mut lo, mut hi) = (self.action_min, self.action_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Linear-quadratic mean-field game: `f = a^2/2 + coupling (x - mean)^2 / 2`
/// with drift `a` and zero terminal cost.
pub fn lq_mean_field(
    coupling: f64,
    sigma: f64,
    t_end: f64,
    mu0: DistributionSpec,
    action_bound: f64,
) -> MfgProblem {
    MfgProblem {
        drift_mean_field: Arc::new(|_, _| 0.0),
        drift_state: Arc::new(|_| 0.0),
        drift_control: Arc::new(|_| 1.0),
        running_cost: Arc::new(move |_, x, mu, a| {
            let d = x - mu.mean();
            0.5 * a * a + 0.5 * coupling * d * d
        }),
        running_cost_dx: Some(Arc::new(move |_, x, mu, _| coupling * (x - mu.mean()))),
        running_cost_da: Some(Arc::new(|_, _, _, a| a)),
        terminal_cost: Arc::new(|_, _| 0.0),
        terminal_cost_dx: Some(Arc::new(|_, _| 0.0)),
        sigma,
        action_min: -action_bound,
        action_max: action_bound,
        mu0,
        t_end,
        drift_bound: 1.0,
        cost_grad_bound: 10.0,
        convexity: 0.5,
        name: "lq_mean_field".into(),
    }
}

/// Population mass within `band` of `x`, measured through a logistically
/// smoothed CDF (smoothing scale `band / 2`) so the crowd cost has a well
/// defined gradient against atomic measures. Returns (mass, d mass / dx).
/// Large measures are subsampled to 160 quantile atoms, deterministically.
fn smoothed_band(mu: &EmpiricalMeasure, x: f64, band: f64) -> (f64, f64) {
    let delta = 0.5 * band;
    let logistic = |u: f64| 1.0 / (1.0 + (-u).exp());
    let logistic_d = |u: f64| {
        let s = logistic(u);
        s * (1.0 - s)
    };
    let eval = |p: f64, w: f64, acc: &mut (f64, f64)| {
        let hi = (x + band - p) / delta;
        let lo = (x - band - p) / delta;
        acc.0 += w * (logistic(hi) - logistic(lo));
        acc.1 += w * (logistic_d(hi) - logistic_d(lo)) / delta;
    };
    let mut acc = (0.0, 0.0);
    const SUBSAMPLE: usize = 160;
    if mu.len() <= SUBSAMPLE {
        for (&p, &w) in mu.points().iter().zip(mu.weights()) {
            eval(p, w, &mut acc);
        }
    } else {
        let w = 1.0 / SUBSAMPLE as f64;
        for i in 0..SUBSAMPLE {
            let q = (i as f64 + 0.5) / SUBSAMPLE as f64;
            eval(mu.quantile(q).expect("q in (0,1)"), w, &mut acc);
        }
    }
    acc
}

/// Crowd-averse game: the running cost penalizes the (smoothed) population
/// mass within `bandwidth` of the agent's own state,
/// `f = a^2/2 + weight * mu([x - h, x + h])`.
pub fn crowd_aversion(
    weight: f64,
    bandwidth: f64,
    sigma: f64,
    t_end: f64,
    mu0: DistributionSpec,
    action_bound: f64,
) -> MfgProblem {
    MfgProblem {
        drift_mean_field: Arc::new(|_, _| 0.0),
        drift_state: Arc::new(|_| 0.0),
        drift_control: Arc::new(|_| 1.0),
        running_cost: Arc::new(move |_, x, mu, a| {
            0.5 * a * a + weight * smoothed_band(mu, x, bandwidth).0
        }),
        running_cost_dx: Some(Arc::new(move |_, x, mu, _| {
            weight * smoothed_band(mu, x, bandwidth).1
        })),
        running_cost_da: Some(Arc::new(|_, _, _, a| a)),
        terminal_cost: Arc::new(|_, _| 0.0),
        terminal_cost_dx: Some(Arc::new(|_, _| 0.0)),
        sigma,
        action_min: -action_bound,
        action_max: action_bound,
        mu0,
        t_end,
        drift_bound: 1.0,
        cost_grad_bound: 10.0,
        convexity: 0.5,
        name: "crowd_aversion".into(),
    }
}

/// Decoupling field and feedback control of the agent problem under a
/// frozen flow.
#[derive(Debug, Clone)]
pub struct AgentDecoupling {
    /// u(t, x) with Y_t = u(t, X_t).
    pub field: GridFunction,
    /// Pointwise Hamiltonian minimizer evaluated through the field.
    pub control: GridFunction,
}

fn flow_grid_matches(p: &MfgProblem, flow: &MeasureFlow, t_steps: usize) -> Result<()> {
    if flow.len() != t_steps + 1 || (flow.t_end() - p.t_end).abs() > 1e-9 * (1.0 + p.t_end) {
        return Err(Error::invalid(format!(
            "flow grid ({} nodes, T = {}) does not match the solver grid ({} nodes, T = {})",
            flow.len(),
            flow.t_end(),
            t_steps + 1,
            p.t_end
        )));
    }
    Ok(())
}

/// The agent's optimality BSDE under a frozen flow, expressed through its
/// decoupling PDE (driver = -H_x at the minimizing action, terminal = g_x).
fn agent_bsde_spec(p: &MfgProblem, flow: &Arc<MeasureFlow>, x0: f64) -> Result<BsdeSpec> {
    let dt = p.t_end / (flow.len() - 1) as f64;
    let node_of = move |t: f64, len: usize| -> usize { ((t / dt).round() as usize).min(len - 1) };
    let p1 = p.clone();
    let p2 = p.clone();
    let p3 = p.clone();
    let flow_b = Arc::clone(flow);
    let flow_h = Arc::clone(flow);
    let flow_g = Arc::clone(flow);
    BsdeSpec::new(
        move |t, x, y| {
            let mu = flow_b.at(node_of(t, flow_b.len()));
            let a = p1.argmin_hamiltonian(t, x, mu, y);
            p1.drift(t, x, mu, a)
        },
        Volatility::constant(p.sigma),
        move |t, x, y, _| {
            let mu = flow_h.at(node_of(t, flow_h.len()));
            let a = p2.argmin_hamiltonian(t, x, mu, y);
            -p2.hamiltonian_dx(t, x, mu, y, a)
        },
        move |x: f64| {
            let mu = flow_g.at(flow_g.len() - 1);
            p3.terminal_cost_dx(x, mu)
        },
        x0,
        p.t_end,
        p.drift_bound + p.cost_grad_bound,
    )
}

/// Solve the agent FBSDE's decoupling PDE under a frozen flow and tabulate
/// the optimal feedback on the same grid.
pub fn solve_agent_decoupling(
    p: &MfgProblem,
    flow: &MeasureFlow,
    grids: &PdeGrids,
) -> Result<AgentDecoupling> {
    p.validate()?;
    flow_grid_matches(p, flow, grids.t_steps)?;
    let flow = Arc::new(flow.clone());
    let spec = agent_bsde_spec(p, &flow, 0.0)?;
    let field = solve_quasilinear_pde(&spec, grids)?;
    let mut control_values = Vec::with_capacity(field.t_grid.len());
    for (n, &t) in field.t_grid.iter().enumerate() {
        let mu = flow.at(n);
        let row: Vec<f64> = field
            .x_grid
            .iter()
            .enumerate()
            .map(|(i, &x)| p.argmin_hamiltonian(t, x, mu, field.node_value(n, i)))
            .collect();
        control_values.push(row);
    }
    let control = GridFunction {
        t_grid: field.t_grid.clone(),
        x_grid: field.x_grid.clone(),
        values: control_values,
        boundary_kind: field.boundary_kind.clone(),
    };
    Ok(AgentDecoupling { field, control })
}

/// Full agent FBSDE under a frozen flow: the decoupling field plus the
/// four-step path reconstruction started from the mean of the initial law.
pub fn solve_agent_fbsde(
    p: &MfgProblem,
    flow: &MeasureFlow,
    grids: &PdeGrids,
    paths: usize,
    seed: u64,
) -> Result<(AgentDecoupling, FbsdeSolution)> {
    let decoupling = solve_agent_decoupling(p, flow, grids)?;
    let flow_arc = Arc::new(flow.clone());
    let spec = agent_bsde_spec(p, &flow_arc, p.mu0.mean())?;
    let solution = four_step_solve(&spec, grids, paths, seed)?;
    Ok((decoupling, solution))
}

/// Parameters of the measure-flow fixed-point iteration.
#[derive(Debug, Clone)]
pub struct MfgPicardParams {
    pub x_grid: Grid1d,
    pub t_steps: usize,
    /// Representation particles per time node.
    pub atoms: usize,
    /// Damping weight on the flow update (1 = undamped Picard).
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Uniform averaging over the iterate history instead of fixed damping.
    pub fictitious_play: bool,
}

impl MfgPicardParams {
    pub fn new(x_grid: Grid1d, t_steps: usize) -> Self {
        MfgPicardParams {
            x_grid,
            t_steps,
            atoms: 2000,
            damping: 1.0,
            tol: 2e-4,
            max_iters: 60,
            fictitious_play: false,
        }
    }
}

/// A measure-flow fixed point with its decoupling field and diagnostics.
#[derive(Debug, Clone)]
pub struct MfgEquilibrium {
    pub flow: MeasureFlow,
    pub decoupling_field: GridFunction,
    pub control_field: GridFunction,
    /// sup_t W1 between the best response and the current flow, per
    /// iteration.
    pub residual_history: Vec<f64>,
    /// sup_t W1 between the final flow and the state law it induces.
    pub consistency_gap: f64,
    pub iterations: usize,
    /// Computed c with |u(t,x)| <= c (1 + |x|) on the grid.
    pub growth_constant: f64,
    /// Computed Lipschitz-in-x constant of u on the grid.
    pub lipschitz_constant: f64,
    /// A-priori feedback bound (c_L / lambda)(1 + c).
    pub control_bound: f64,
}

/// Antithetic pair stream: odd members replay the even member's normals
/// with flipped sign.
struct AntitheticStream {
    rng: rand_chacha::ChaCha8Rng,
    flip: bool,
}

impl AntitheticStream {
    fn new(seed: u64, member: usize) -> Self {
        AntitheticStream {
            rng: rng::substream(seed, (member / 2) as u64),
            flip: member % 2 == 1,
        }
    }

    fn draw(&mut self) -> f64 {
        let v = rng::normal(&mut self.rng);
        if self.flip {
            -v
        } else {
            v
        }
    }
}

/// Population simulation against a frozen flow: stratified initial
/// quantiles, antithetic noise pairs, trapezoidal (Heun) drift so the mean
/// path carries second-order time accuracy.
fn simulate_population(
    p: &MfgProblem,
    flow: &MeasureFlow,
    control: &GridFunction,
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let steps = flow.len() - 1;
    let dt = p.t_end / steps as f64;
    let sqrt_dt = dt.sqrt();
    let init = p.mu0.to_atoms(m)?;
    let mut current: Vec<f64> = (0..m)
        .map(|j| {
            let q = (j as f64 + 0.5) / m as f64;
            init.quantile(q).expect("q in (0,1)")
        })
        .collect();
    let mut noises: Vec<AntitheticStream> =
        (0..m).map(|j| AntitheticStream::new(seed, j)).collect();
    let mut states = vec![vec![0.0; m]; steps + 1];
    states[0].clone_from(&current);
    for k in 0..steps {
        let t = k as f64 * dt;
        let t_next = t + dt;
        let mu = flow.at(k);
        let mu_next = flow.at(k + 1);
        let next: Vec<f64> = current
            .par_iter()
            .zip(noises.par_iter_mut())
            .map(|(&x, stream)| {
                let dw = sqrt_dt * stream.draw();
                let a = control
                    .eval_at_node(k, x)
                    .clamp(p.action_min, p.action_max);
                let b = p.drift(t, x, mu, a);
                let x_pred = x + b * dt + p.sigma * dw;
                let a_next = control
                    .eval_at_node(k + 1, x_pred)
                    .clamp(p.action_min, p.action_max);
                let b_next = p.drift(t_next, x_pred, mu_next, a_next);
                x + 0.5 * (b + b_next) * dt + p.sigma * dw
            })
            .collect();
        if next.iter().any(|x| !x.is_finite() || x.abs() > 1e8) {
            return Err(Error::NumericalFailure(format!(
                "population simulation blew up at step {}",
                k + 1
            )));
        }
        current = next;
        states[k + 1].clone_from(&current);
    }
    Ok(states)
}

fn flow_from_states(times: &[f64], states: &[Vec<f64>]) -> Result<MeasureFlow> {
    let measures: std::result::Result<Vec<_>, _> = states
        .iter()
        .map(|row| EmpiricalMeasure::from_samples(row))
        .collect();
    MeasureFlow::new(times.to_vec(), measures?)
}

/// Fixed point of the best-response map on measure flows by damped Picard
/// iteration with common random numbers across iterations.
pub fn mfg_picard(p: &MfgProblem, params: &MfgPicardParams, seed: u64) -> Result<MfgEquilibrium> {
    p.validate()?;
    if !(params.damping > 0.0 && params.damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    if !(params.tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let times = uniform_grid(p.t_end, params.t_steps)?;
    let grids = PdeGrids::new(params.x_grid, params.t_steps);
    let init_atoms = p.mu0.to_atoms(params.atoms)?;
    let mut flow = MeasureFlow::new(times.clone(), vec![init_atoms; params.t_steps + 1])?;

    let mut residuals = Vec::new();
    for iter in 1..=params.max_iters {
        let agent = solve_agent_decoupling(p, &flow, &grids)?;
        let states = simulate_population(p, &flow, &agent.control, params.atoms, seed)?;
        let response = flow_from_states(&times, &states)?;
        let residual = response.sup_wasserstein1(&flow)?;
        residuals.push(residual);
        if residual <= params.tol {
            flow = response;
            // Self-consistency of the accepted flow.
            let agent = solve_agent_decoupling(p, &flow, &grids)?;
            let states = simulate_population(p, &flow, &agent.control, params.atoms, seed)?;
            let induced = flow_from_states(&times, &states)?;
            let consistency_gap = flow.sup_wasserstein1(&induced)?;
            let (growth, lipschitz, sup_field) = field_constants(&agent.field);
            let control_bound = (p.drift_bound / p.convexity) * (1.0 + sup_field);
            return Ok(MfgEquilibrium {
                flow,
                decoupling_field: agent.field,
                control_field: agent.control,
                residual_history: residuals,
                consistency_gap,
                iterations: iter,
                growth_constant: growth,
                lipschitz_constant: lipschitz,
                control_bound,
            });
        }
        let delta = if params.fictitious_play {
            1.0 / (iter as f64 + 1.0)
        } else {
            params.damping
        };
        let mixed: std::result::Result<Vec<_>, _> = flow
            .measures()
            .iter()
            .zip(response.measures())
            .map(|(old, new)| old.displacement_mix(new, delta, params.atoms))
            .collect();
        flow = MeasureFlow::new(times.clone(), mixed?)?;
    }
    Err(Error::NonConvergence {
        context: format!(
            "measure-flow Picard iteration for {} ({} iterations)",
            p.name, params.max_iters
        ),
        residuals,
    })
}

/// Grid constants of the decoupling field: growth c with |u| <= c(1+|x|),
/// the largest adjacent-node slope, and the sup of |u| itself (the grid
/// analogue of the almost-sure costate bound).
pub fn field_constants(field: &GridFunction) -> (f64, f64, f64) {
    let mut growth = 0.0f64;
    let mut lipschitz = 0.0f64;
    let mut sup = 0.0f64;
    let dx = field.x_grid[1] - field.x_grid[0];
    for row in &field.values {
        for (i, &v) in row.iter().enumerate() {
            growth = growth.max(v.abs() / (1.0 + field.x_grid[i].abs()));
            sup = sup.max(v.abs());
            if i + 1 < row.len() {
                lipschitz = lipschitz.max((row[i + 1] - v).abs() / dx);
            }
        }
    }
    (growth, lipschitz, sup)
}

/// Monte Carlo estimate of a feedback control's cost against a frozen
/// flow. Two controls evaluated with the same seed share their noise and
/// initial draws, so cost differences are paired.
pub fn control_cost(
    p: &MfgProblem,
    flow: &MeasureFlow,
    feedback: &(dyn Fn(usize, f64) -> f64 + Sync),
    paths: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if paths < 2 {
        return Err(Error::invalid("need at least two cost paths"));
    }
    let steps = flow.len() - 1;
    let dt = p.t_end / steps as f64;
    let sqrt_dt = dt.sqrt();
    let costs: Vec<f64> = (0..paths)
        .into_par_iter()
        .map(|pth| {
            let mut r = rng::substream(seed, pth as u64);
            let mut x = p.mu0.sample(&mut r);
            let mut total = 0.0;
            for k in 0..steps {
                let t = k as f64 * dt;
                let mu = flow.at(k);
                let a = feedback(k, x).clamp(p.action_min, p.action_max);
                total += (p.running_cost)(t, x, mu, a) * dt;
                x += p.drift(t, x, mu, a) * dt + p.sigma * sqrt_dt * rng::normal(&mut r);
            }
            total + (p.terminal_cost)(x, flow.at(steps))
        })
        .collect();
    let mean = costs.iter().sum::<f64>() / paths as f64;
    let var =
        costs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (paths - 1) as f64;
    Ok(CostEstimate {
        mean,
        std_error: (var / paths as f64).sqrt(),
        samples: costs,
    })
}

#[derive(Debug, Clone)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: Vec<f64>,
}

/// Margins of the variational inequality `J(a) >= J(a*) + lambda E int
/// |a - a*|^2 dt` for randomly perturbed admissible controls: each entry is
/// `J(a) - J(a*) - lambda E int |a - a*|^2 dt`, nonnegative up to Monte
/// Carlo error. Perturbed and optimal paths share noise.
pub fn variational_margins(
    p: &MfgProblem,
    flow: &MeasureFlow,
    control: &GridFunction,
    n_perturbations: usize,
    paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let steps = flow.len() - 1;
    let dt = p.t_end / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut margins = Vec::with_capacity(n_perturbations);
    let mut pr = rng::substream(seed ^ 0x5eed_cafe, 0);
    for _ in 0..n_perturbations {
        let c0 = 0.4 * (rand::Rng::random::<f64>(&mut pr) * 2.0 - 1.0);
        let c1 = 0.4 * (rand::Rng::random::<f64>(&mut pr) * 2.0 - 1.0);
        let c2 = 0.2 * (rand::Rng::random::<f64>(&mut pr) * 2.0 - 1.0);
        let freq = 1.0 + (3.0 * rand::Rng::random::<f64>(&mut pr)).floor();
        let t_end = p.t_end;
        let bump = move |t: f64, x: f64| {
            c0 + c1 * (std::f64::consts::PI * freq * t / t_end).sin() + c2 * (0.7 * x).sin()
        };

        let stats: Vec<(f64, f64, f64)> = (0..paths)
            .into_par_iter()
            .map(|pth| {
                let mut r = rng::substream(seed, pth as u64);
                let x_init = p.mu0.sample(&mut r);
                let mut x_opt = x_init;
                let mut x_dev = x_init;
                let mut cost_opt = 0.0;
                let mut cost_dev = 0.0;
                let mut gap2 = 0.0;
                for k in 0..steps {
                    let t = k as f64 * dt;
                    let mu = flow.at(k);
                    let a_opt = control
                        .eval_at_node(k, x_opt)
                        .clamp(p.action_min, p.action_max);
                    let a_dev = (control.eval_at_node(k, x_dev) + bump(t, x_dev))
                        .clamp(p.action_min, p.action_max);
                    cost_opt += (p.running_cost)(t, x_opt, mu, a_opt) * dt;
                    cost_dev += (p.running_cost)(t, x_dev, mu, a_dev) * dt;
                    gap2 += (a_dev - a_opt) * (a_dev - a_opt) * dt;
                    let dw = sqrt_dt * rng::normal(&mut r);
                    x_opt += p.drift(t, x_opt, mu, a_opt) * dt + p.sigma * dw;
                    x_dev += p.drift(t, x_dev, mu, a_dev) * dt + p.sigma * dw;
                }
                let mu_t = flow.at(steps);
                cost_opt += (p.terminal_cost)(x_opt, mu_t);
                cost_dev += (p.terminal_cost)(x_dev, mu_t);
                (cost_opt, cost_dev, gap2)
            })
            .collect();
        let n = paths as f64;
        let j_opt: f64 = stats.iter().map(|s| s.0).sum::<f64>() / n;
        let j_dev: f64 = stats.iter().map(|s| s.1).sum::<f64>() / n;
        let gap: f64 = stats.iter().map(|s| s.2).sum::<f64>() / n;
        margins.push(j_dev - j_opt - p.convexity * gap);
    }
    Ok(margins)
}
