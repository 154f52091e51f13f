//! Quasilinear parabolic solver for the decoupling field.
//!
//! Solves `theta_t + b theta_x + (1/2) sigma^2 theta_xx - h = 0` backward
//! from `theta(T, .) = g` on a truncated domain, by a theta-weighted
//! implicit finite-difference step (Crank-Nicolson by default, with a few
//! fully implicit startup steps to damp terminal kinks). Nonlinear
//! coefficients are frozen per Picard sweep, at most 50 sweeps to 1e-10.

use super::{z_map, BsdeSpec};
use crate::error::{Error, Result};
use std::sync::Arc;

/// Uniform 1-d grid with `n` intervals (n+1 nodes).
#[derive(Debug, Clone, Copy)]
pub struct Grid1d {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1d {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::invalid("grid needs hi > lo and at least 2 cells"));
        }
        Ok(Grid1d { lo, hi, n })
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.dx()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.node(i)).collect()
    }
}

/// How the truncated domain's edge rows are closed.
#[derive(Clone)]
pub enum BoundaryKind {
    /// The terminal function transported along the zero-diffusion
    /// characteristic: the boundary rows solve the first-order equation
    /// `theta_t + b theta_x - h = 0` with one-sided differences.
    TransportedTerminal,
    /// Explicit Dirichlet data `(t, x_boundary) -> value`.
    Dirichlet(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryKind::TransportedTerminal => write!(f, "TransportedTerminal"),
            BoundaryKind::Dirichlet(_) => write!(f, "Dirichlet(fn)"),
        }
    }
}

/// Space-time grid and stepping parameters of the PDE solve.
#[derive(Debug, Clone)]
pub struct PdeGrids {
    pub x: Grid1d,
    pub t_steps: usize,
    /// Implicitness weight: 0.5 = Crank-Nicolson, 1.0 = fully implicit.
    pub time_weight: f64,
    /// Number of initial backward steps forced fully implicit.
    pub rannacher_steps: usize,
    pub max_sweeps: usize,
    pub sweep_tol: f64,
    pub boundary: BoundaryKind,
}

impl PdeGrids {
    pub fn new(x: Grid1d, t_steps: usize) -> Self {
        PdeGrids {
            x,
            t_steps,
            time_weight: 0.5,
            rannacher_steps: 2,
            max_sweeps: 50,
            sweep_tol: 1e-10,
            boundary: BoundaryKind::TransportedTerminal,
        }
    }

    pub fn implicit(mut self) -> Self {
        self.time_weight = 1.0;
        self
    }

    pub fn with_boundary(mut self, boundary: BoundaryKind) -> Self {
        self.boundary = boundary;
        self
    }
}

/// A function sampled on the space-time grid; `values[n][i]` is node i at
/// time node n (time 0 first).
#[derive(Debug, Clone)]
pub struct GridFunction {
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub boundary_kind: String,
}

impl GridFunction {
    /// Linear interpolation in x at time node `n`; clamped at the domain
    /// edges (the domain is chosen wide enough that clamping is harmless).
    pub fn eval_at_node(&self, n: usize, x: f64) -> f64 {
        let xs = &self.x_grid;
        let row = &self.values[n];
        if x <= xs[0] {
            return row[0];
        }
        if x >= *xs.last().unwrap() {
            return *row.last().unwrap();
        }
        let dx = xs[1] - xs[0];
        let i = (((x - xs[0]) / dx).floor() as usize).min(xs.len() - 2);
        let w = (x - xs[i]) / dx;
        row[i] * (1.0 - w) + row[i + 1] * w
    }

    /// Bilinear interpolation in (t, x).
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let ts = &self.t_grid;
        if t <= ts[0] {
            return self.eval_at_node(0, x);
        }
        if t >= *ts.last().unwrap() {
            return self.eval_at_node(ts.len() - 1, x);
        }
        let dt = ts[1] - ts[0];
        let n = (((t - ts[0]) / dt).floor() as usize).min(ts.len() - 2);
        let w = (t - ts[n]) / dt;
        self.eval_at_node(n, x) * (1.0 - w) + self.eval_at_node(n + 1, x) * w
    }

    /// Spatial slope at time node `n`, centered where possible.
    pub fn x_derivative(&self, n: usize, x: f64) -> f64 {
        let xs = &self.x_grid;
        let row = &self.values[n];
        let dx = xs[1] - xs[0];
        if x <= xs[0] {
            return (row[1] - row[0]) / dx;
        }
        if x >= *xs.last().unwrap() {
            let m = row.len();
            return (row[m - 1] - row[m - 2]) / dx;
        }
        let i = (((x - xs[0]) / dx).floor() as usize).min(xs.len() - 2);
        // Slope of the interpolating segment keeps Y-theta consistency exact.
        (row[i + 1] - row[i]) / dx
    }

    pub fn node_value(&self, n: usize, i: usize) -> f64 {
        self.values[n][i]
    }
}

/// Tridiagonal solve (Thomas algorithm); `sub[0]` and `sup[last]` unused.
pub(crate) fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < 1e-300 {
        return Err(Error::NumericalFailure("tridiagonal pivot vanished".into()));
    }
    c[0] = sup[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * c[i - 1];
        if pivot.abs() < 1e-300 {
            return Err(Error::NumericalFailure("tridiagonal pivot vanished".into()));
        }
        if i < n - 1 {
            c[i] = sup[i] / pivot;
        }
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / pivot;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

struct RowCoefs {
    b: f64,
    half_sigma2: f64,
    h: f64,
}

/// Frozen coefficients at (t, x_i) given a field iterate.
fn coefs_at(spec: &BsdeSpec, t: f64, xs: &[f64], field: &[f64], dx: f64) -> Result<Vec<RowCoefs>> {
    let n = xs.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = xs[i];
        let y = field[i];
        // One-sided slopes at the edges, centered inside.
        let p = if i == 0 {
            (field[1] - field[0]) / dx
        } else if i == n - 1 {
            (field[n - 1] - field[n - 2]) / dx
        } else {
            (field[i + 1] - field[i - 1]) / (2.0 * dx)
        };
        let z = z_map(&spec.volatility, t, x, y, p)?;
        let sigma = spec.volatility.eval(t, x, y, p)?;
        out.push(RowCoefs {
            b: (spec.drift)(t, x, y),
            half_sigma2: 0.5 * sigma * sigma,
            h: (spec.driver)(t, x, y, z),
        });
    }
    Ok(out)
}

/// Backward solve of the decoupling-field PDE.
pub fn solve_quasilinear_pde(spec: &BsdeSpec, grids: &PdeGrids) -> Result<GridFunction> {
    let xs = grids.x.nodes();
    let n_nodes = xs.len();
    let dx = grids.x.dx();
    let steps = grids.t_steps;
    if steps == 0 {
        return Err(Error::invalid("need at least one time step"));
    }
    let dt = spec.t_end / steps as f64;
    let t_grid: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();

    let mut values = vec![vec![0.0; n_nodes]; steps + 1];
    for (i, &x) in xs.iter().enumerate() {
        values[steps][i] = (spec.terminal)(x);
    }

    for back in 0..steps {
        let n = steps - 1 - back; // solving for time node n from node n+1
        let t_new = t_grid[n];
        let t_old = t_grid[n + 1];
        let w = if back < grids.rannacher_steps {
            1.0
        } else {
            grids.time_weight
        };
        let old_row = values[n + 1].clone();
        let old_coefs = coefs_at(spec, t_old, &xs, &old_row, dx)?;

        // Explicit contribution L[theta^{n+1}] evaluated once.
        let mut explicit = vec![0.0; n_nodes];
        if w < 1.0 {
            for i in 0..n_nodes {
                let c = &old_coefs[i];
                let lap;
                let adv;
                if i == 0 {
                    adv = c.b * (old_row[1] - old_row[0]) / dx;
                    lap = 0.0;
                } else if i == n_nodes - 1 {
                    adv = c.b * (old_row[i] - old_row[i - 1]) / dx;
                    lap = 0.0;
                } else {
                    adv = c.b * (old_row[i + 1] - old_row[i - 1]) / (2.0 * dx);
                    lap = c.half_sigma2 * (old_row[i + 1] - 2.0 * old_row[i] + old_row[i - 1])
                        / (dx * dx);
                }
                explicit[i] = adv + lap - c.h;
            }
        }

        let mut iterate = old_row.clone();
        let mut converged = false;
        let mut sweep_history = Vec::new();
        for _sweep in 0..grids.max_sweeps {
            let coefs = coefs_at(spec, t_new, &xs, &iterate, dx)?;
            let mut sub = vec![0.0; n_nodes];
            let mut diag = vec![0.0; n_nodes];
            let mut sup = vec![0.0; n_nodes];
            let mut rhs = vec![0.0; n_nodes];

            for i in 1..n_nodes - 1 {
                let c = &coefs[i];
                let adv = c.b / (2.0 * dx);
                let dif = c.half_sigma2 / (dx * dx);
                sub[i] = -dt * w * (-adv + dif);
                diag[i] = 1.0 + dt * w * 2.0 * dif;
                sup[i] = -dt * w * (adv + dif);
                rhs[i] = old_row[i] + dt * (1.0 - w) * explicit[i] - dt * w * c.h;
            }

            match &grids.boundary {
                BoundaryKind::TransportedTerminal => {
                    // Zero-diffusion rows with one-sided advection.
                    let c0 = &coefs[0];
                    diag[0] = 1.0 + dt * w * c0.b / dx;
                    sup[0] = -dt * w * c0.b / dx;
                    rhs[0] = old_row[0] + dt * (1.0 - w) * explicit[0] - dt * w * c0.h;
                    let cm = &coefs[n_nodes - 1];
                    diag[n_nodes - 1] = 1.0 - dt * w * cm.b / dx;
                    sub[n_nodes - 1] = dt * w * cm.b / dx;
                    rhs[n_nodes - 1] = old_row[n_nodes - 1]
                        + dt * (1.0 - w) * explicit[n_nodes - 1]
                        - dt * w * cm.h;
                }
                BoundaryKind::Dirichlet(f) => {
                    diag[0] = 1.0;
                    sup[0] = 0.0;
                    rhs[0] = f(t_new, xs[0]);
                    diag[n_nodes - 1] = 1.0;
                    sub[n_nodes - 1] = 0.0;
                    rhs[n_nodes - 1] = f(t_new, xs[n_nodes - 1]);
                }
            }

            let solution = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
            let diff = solution
                .iter()
                .zip(&iterate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            iterate = solution;
            sweep_history.push(diff);
            if diff <= grids.sweep_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NumericalFailure(format!(
                "coefficient-freezing sweeps did not reach {} at t = {t_new:.6}; history {:?}",
                grids.sweep_tol,
                &sweep_history[sweep_history.len().saturating_sub(5)..]
            )));
        }
        values[n] = iterate;
    }

    Ok(GridFunction {
        t_grid,
        x_grid: xs,
        values,
        boundary_kind: format!("{:?}", grids.boundary),
    })
}
