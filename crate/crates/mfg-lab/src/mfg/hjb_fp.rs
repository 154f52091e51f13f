//! The analytic route: a backward Hamilton-Jacobi-Bellman solve for the
//! value function coupled to a forward Fokker-Planck march for the
//! population density, iterated with damping on the density until the flow
//! is a fixed point.
//!
//! The Fokker-Planck step advances cell masses in conservative flux form
//! with upwinded advection and no-flux boundaries, so total mass is
//! conserved to solver roundoff and the implicit step keeps masses
//! nonnegative (M-matrix).

use super::MfgProblem;
use crate::error::{Error, Result};
use crate::fbsde::pde::{solve_tridiagonal, Grid1d, GridFunction};
use crate::measures::{uniform_grid, EmpiricalMeasure, MeasureFlow};

#[derive(Debug, Clone)]
pub struct HjbFpParams {
    pub x_grid: Grid1d,
    pub t_steps: usize,
    /// Damping weight on the density update (1 = undamped).
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Implicitness of the Fokker-Planck step (1 = fully implicit, which is
    /// the positivity-safe default; 0.5 = Crank-Nicolson).
    pub fp_time_weight: f64,
    /// Policy refinements per backward HJB step.
    pub policy_iters: usize,
}

impl HjbFpParams {
    pub fn new(x_grid: Grid1d, t_steps: usize) -> Self {
        HjbFpParams {
            x_grid,
            t_steps,
            damping: 1.0,
            tol: 2e-4,
            max_iters: 60,
            fp_time_weight: 1.0,
            policy_iters: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HjbFpSolution {
    pub value: GridFunction,
    pub control: GridFunction,
    pub flow: MeasureFlow,
    /// Cell masses per time node.
    pub masses: Vec<Vec<f64>>,
    pub residual_history: Vec<f64>,
    /// Largest |sum(masses) - 1| observed over all steps of the final
    /// sweep, before any normalization (none is applied).
    pub mass_drift: f64,
    /// Smallest cell mass observed (>= -roundoff).
    pub min_mass: f64,
    pub iterations: usize,
}

/// Project a distribution onto cell masses of the grid (cells centered at
/// the nodes).
fn project_initial_masses(p: &MfgProblem, grid: &Grid1d) -> Result<Vec<f64>> {
    let dx = grid.dx();
    let n = grid.n + 1;
    let mut masses = vec![0.0; n];
    for (i, m) in masses.iter_mut().enumerate() {
        let x = grid.node(i);
        let (lo, hi) = (x - 0.5 * dx, x + 0.5 * dx);
        *m = p.mu0.cdf(hi) - p.mu0.cdf(lo);
    }
    let total: f64 = masses.iter().sum();
    if total < 0.99 {
        return Err(Error::invalid(format!(
            "the grid captures only {total:.3} of the initial mass; widen the domain"
        )));
    }
    for m in &mut masses {
        *m /= total;
    }
    Ok(masses)
}

fn measure_from_masses(grid: &Grid1d, masses: &[f64]) -> Result<EmpiricalMeasure> {
    let nodes = grid.nodes();
    EmpiricalMeasure::from_weighted(&nodes, masses)
}

/// One backward HJB sweep against a frozen flow. Returns the value field
/// and the argmin control on the grid.
pub fn solve_hjb_backward(
    p: &MfgProblem,
    params: &HjbFpParams,
    flow: &MeasureFlow,
) -> Result<(GridFunction, GridFunction)> {
    let grid = params.x_grid;
    let xs = grid.nodes();
    let n = xs.len();
    let dx = grid.dx();
    let steps = params.t_steps;
    let dt = p.t_end / steps as f64;
    let t_grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let diffusion = 0.5 * p.sigma * p.sigma;

    let mut value = vec![vec![0.0; n]; steps + 1];
    let mut control = vec![vec![0.0; n]; steps + 1];
    let mu_t = flow.at(steps);
    for (i, &x) in xs.iter().enumerate() {
        value[steps][i] = (p.terminal_cost)(x, mu_t);
    }
    // Terminal control: minimizer against the terminal slope.
    for i in 0..n {
        let slope = grid_slope(&value[steps], i, dx);
        control[steps][i] = p.argmin_hamiltonian(p.t_end, xs[i], mu_t, slope);
    }

    for nstep in (0..steps).rev() {
        let t = t_grid[nstep];
        let mu = flow.at(nstep);
        let mut reference = value[nstep + 1].clone();
        for _ in 0..params.policy_iters.max(1) {
            // Policy from the current reference slope.
            let policy: Vec<f64> = (0..n)
                .map(|i| {
                    let slope = grid_slope(&reference, i, dx);
                    p.argmin_hamiltonian(t, xs[i], mu, slope)
                })
                .collect();
            // Implicit linear step with the frozen policy:
            // (I - dt (b d_x + D d_xx)) v^n = v^{n+1} + dt f.
            let mut sub = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            for i in 0..n {
                let b = p.drift(t, xs[i], mu, policy[i]);
                let f = (p.running_cost)(t, xs[i], mu, policy[i]);
                if i == 0 {
                    // Zero-diffusion transport row, one-sided.
                    diag[i] = 1.0 + dt * b / dx;
                    sup[i] = -dt * b / dx;
                } else if i == n - 1 {
                    diag[i] = 1.0 - dt * b / dx;
                    sub[i] = dt * b / dx;
                } else {
                    let adv = b / (2.0 * dx);
                    let dif = diffusion / (dx * dx);
                    sub[i] = -dt * (-adv + dif);
                    diag[i] = 1.0 + dt * 2.0 * dif;
                    sup[i] = -dt * (adv + dif);
                }
                rhs[i] = value[nstep + 1][i] + dt * f;
            }
            reference = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
            control[nstep] = policy;
        }
        value[nstep] = reference;
    }
    let value_fn = GridFunction {
        t_grid: t_grid.clone(),
        x_grid: xs.clone(),
        values: value,
        boundary_kind: "transported-terminal".into(),
    };
    let control_fn = GridFunction {
        t_grid,
        x_grid: xs,
        values: control,
        boundary_kind: "argmin".into(),
    };
    Ok((value_fn, control_fn))
}

fn grid_slope(row: &[f64], i: usize, dx: f64) -> f64 {
    let n = row.len();
    if i == 0 {
        (row[1] - row[0]) / dx
    } else if i == n - 1 {
        (row[n - 1] - row[n - 2]) / dx
    } else {
        (row[i + 1] - row[i - 1]) / (2.0 * dx)
    }
}

/// Forward Fokker-Planck march of cell masses given a feedback control.
/// Conservative flux form, upwinded advection, no-flux boundaries; returns
/// (masses per node, max |mass - 1|, min mass).
pub fn march_fokker_planck(
    p: &MfgProblem,
    params: &HjbFpParams,
    flow: &MeasureFlow,
    control: &GridFunction,
    initial: &[f64],
) -> Result<(Vec<Vec<f64>>, f64, f64)> {
    let grid = params.x_grid;
    let xs = grid.nodes();
    let n = xs.len();
    let dx = grid.dx();
    let steps = params.t_steps;
    let dt = p.t_end / steps as f64;
    let diffusion = 0.5 * p.sigma * p.sigma;
    let w = params.fp_time_weight;

    let mut masses = vec![initial.to_vec()];
    let mut current = initial.to_vec();
    let mut mass_drift = 0.0f64;
    let mut min_mass = 0.0f64;

    for k in 0..steps {
        let t = k as f64 * dt;
        let mu = flow.at(k);
        // Face velocities from the feedback at time-node k.
        let velocity: Vec<f64> = (0..n)
            .map(|i| p.drift(t, xs[i], mu, control.values[k][i]))
            .collect();
        // Operator L in mass coordinates: (L m)_i = -(F_{i+1/2} - F_{i-1/2})
        // with F in mass units; assembled as a tridiagonal stencil.
        // Row i couples m_{i-1}, m_i, m_{i+1} through the two faces.
        let face = |i: usize| 0.5 * (velocity[i] + velocity[i + 1]);
        let assemble = |m: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for i in 0..n - 1 {
                let v = face(i);
                let adv = if v >= 0.0 { v * m[i] } else { v * m[i + 1] };
                let dif = -diffusion * (m[i + 1] - m[i]) / dx;
                let flux = (adv + dif) / dx;
                out[i] -= flux;
                out[i + 1] += flux;
            }
            out
        };
        // Implicit part: (I - dt w L) m^{k+1} = m^k + dt (1-w) L m^k.
        let mut sub = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n - 1 {
            let v = face(i);
            let (a_lo, a_hi) = if v >= 0.0 { (v, 0.0) } else { (0.0, v) };
            let d = diffusion / dx;
            // Flux F_{i+1/2} = (a_lo m_i + a_hi m_{i+1} - d (m_{i+1} - m_i)) / dx
            let c_lo = (a_lo + d) / dx;
            let c_hi = (a_hi - d) / dx;
            // Row i gets -F, row i+1 gets +F.
            diag[i] += dt * w * c_lo;
            sup[i] += dt * w * c_hi;
            sub[i + 1] -= dt * w * c_lo;
            diag[i + 1] -= dt * w * c_hi;
        }
        let explicit = assemble(&current);
        let rhs: Vec<f64> = (0..n)
            .map(|i| current[i] + dt * (1.0 - w) * explicit[i])
            .collect();
        let next = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
        let total: f64 = next.iter().sum();
        mass_drift = mass_drift.max((total - 1.0).abs());
        min_mass = min_mass.min(next.iter().copied().fold(f64::INFINITY, f64::min));
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::NumericalFailure(format!(
                "Fokker-Planck step {} lost mass: total {total}",
                k + 1
            )));
        }
        current = next;
        masses.push(current.clone());
    }
    Ok((masses, mass_drift, min_mass))
}

/// Coupled HJB / Fokker-Planck fixed point with damping on the density.
pub fn hjb_fp_solve(p: &MfgProblem, params: &HjbFpParams) -> Result<HjbFpSolution> {
    p.validate()?;
    if !(params.damping > 0.0 && params.damping <= 1.0) {
        return Err(Error::invalid("damping must lie in (0, 1]"));
    }
    let grid = params.x_grid;
    let times = uniform_grid(p.t_end, params.t_steps)?;
    let initial = project_initial_masses(p, &grid)?;

    // Initial guess: the initial distribution frozen in time.
    let mut mass_table: Vec<Vec<f64>> = vec![initial.clone(); params.t_steps + 1];
    let flow_of = |table: &Vec<Vec<f64>>| -> Result<MeasureFlow> {
        let measures: Result<Vec<_>> = table
            .iter()
            .map(|m| measure_from_masses(&grid, m))
            .collect();
        MeasureFlow::new(times.clone(), measures?)
    };
    let mut flow = flow_of(&mass_table)?;

    let mut residuals = Vec::new();
    for iter in 1..=params.max_iters {
        let (value, control) = solve_hjb_backward(p, params, &flow)?;
        let (new_masses, mass_drift, min_mass) =
            march_fokker_planck(p, params, &flow, &control, &initial)?;
        let new_flow = flow_of(&new_masses)?;
        let residual = new_flow.sup_wasserstein1(&flow)?;
        residuals.push(residual);
        if residual <= params.tol {
            return Ok(HjbFpSolution {
                value,
                control,
                flow: new_flow,
                masses: new_masses,
                residual_history: residuals,
                mass_drift,
                min_mass,
                iterations: iter,
            });
        }
        for (row, new_row) in mass_table.iter_mut().zip(&new_masses) {
            for (m, &nm) in row.iter_mut().zip(new_row) {
                *m = (1.0 - params.damping) * *m + params.damping * nm;
            }
        }
        flow = flow_of(&mass_table)?;
    }
    Err(Error::NonConvergence {
        context: format!("HJB/Fokker-Planck iteration for {}", p.name),
        residuals,
    })
}
