//! Forward-backward SDE solvers.
//!
//! Two independent routes are provided and cross-checked against each
//! other:
//!
//! * a least-squares Monte Carlo backward solver ([`regression`]), and
//! * the four-step decoupling scheme ([`four_step_solve`]): solve the z-map,
//!   solve the quasilinear parabolic PDE for the decoupling field theta,
//!   simulate the forward SDE through theta, and reconstruct Y = theta(t, X)
//!   and Z from the z-map.
//!
//! Sign convention throughout: `dY = h dt + Z dW` with `Y_T = g(X_T)` —
//! drivers written for the adjoint convention `dY = -H_x dt + Z dW` negate
//! their integrand before being handed to these solvers.

pub mod black_scholes;
pub mod pde;
pub mod regression;

pub use black_scholes::{black_scholes_put, BlackScholesInstance};
pub use pde::{solve_quasilinear_pde, BoundaryKind, Grid1d, GridFunction, PdeGrids};
pub use regression::{solve_bsde_regression, solve_bsde_regression_with, RegressionSolution};

use crate::error::{Error, Result};
use crate::rng;
use rayon::prelude::*;
use std::sync::Arc;

/// Coefficient of the forward state, `(t, x, y) -> value`.
pub type CoefFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Backward driver `(t, x, y, z) -> rate`.
pub type DriverFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Terminal condition `x -> value`.
pub type TerminalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Forward volatility. Every instance in this crate is independent of z;
/// the z-dependent branch exists for completeness and requires a declared
/// contraction constant.
#[derive(Clone)]
pub enum Volatility {
    ZIndependent(CoefFn),
    ZDependent {
        f: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
        z_lipschitz: f64,
    },
}

impl Volatility {
    pub fn constant(s: f64) -> Self {
        Volatility::ZIndependent(Arc::new(move |_, _, _| s))
    }

    pub fn of(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Volatility::ZIndependent(Arc::new(f))
    }

    /// Value with z already resolved through the z-map.
    pub fn eval(&self, t: f64, x: f64, y: f64, p: f64) -> Result<f64> {
        match self {
            Volatility::ZIndependent(f) => Ok(f(t, x, y)),
            Volatility::ZDependent { f, .. } => {
                let z = z_map(self, t, x, y, p)?;
                Ok(f(t, x, y, z))
            }
        }
    }
}

/// Step 1 of the decoupling scheme: resolve `z = p * sigma(t, x, y, z)`.
/// Closed form when sigma ignores z, otherwise a fixed-point iteration that
/// must contract.
pub fn z_map(vol: &Volatility, t: f64, x: f64, y: f64, p: f64) -> Result<f64> {
    match vol {
        Volatility::ZIndependent(f) => Ok(p * f(t, x, y)),
        Volatility::ZDependent { f, z_lipschitz } => {
            if p.abs() * z_lipschitz >= 1.0 {
                return Err(Error::UnsupportedInstance(format!(
                    "z-dependent volatility does not contract at |p| = {}",
                    p.abs()
                )));
            }
            let mut z = p * f(t, x, y, 0.0);
            for _ in 0..200 {
                let next = p * f(t, x, y, z);
                if (next - z).abs() <= 1e-12 {
                    return Ok(next);
                }
                z = next;
            }
            Err(Error::NumericalFailure(
                "z-map fixed point did not reach 1e-12".into(),
            ))
        }
    }
}

/// A forward-backward system `dX = b dt + sigma dW`, `dY = h dt + Z dW`,
/// `X_0 = x0`, `Y_T = g(X_T)`.
#[derive(Clone)]
pub struct BsdeSpec {
    pub drift: CoefFn,
    pub volatility: Volatility,
    pub driver: DriverFn,
    pub terminal: TerminalFn,
    pub x0: f64,
    pub t_end: f64,
    /// Declared Lipschitz constant of the driver in (y, z).
    pub driver_lipschitz: f64,
}

impl BsdeSpec {
    pub fn new(
        drift: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        volatility: Volatility,
        driver: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(f64) -> f64 + Send + Sync + 'static,
        x0: f64,
        t_end: f64,
        driver_lipschitz: f64,
    ) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        Ok(BsdeSpec {
            drift: Arc::new(drift),
            volatility,
            driver: Arc::new(driver),
            terminal: Arc::new(terminal),
            x0,
            t_end,
            driver_lipschitz,
        })
    }
}

/// Output of the four-step scheme: the decoupling field plus reconstructed
/// path ensembles.
#[derive(Debug, Clone)]
pub struct FbsdeSolution {
    pub theta: GridFunction,
    pub x_paths: Vec<Vec<f64>>,
    pub y_paths: Vec<Vec<f64>>,
    pub z_paths: Vec<Vec<f64>>,
    /// theta(0, x0): deterministic initial backward value.
    pub y0: f64,
    /// Monte Carlo estimate of E|Y_T - g(X_T)|.
    pub terminal_consistency: f64,
}

/// Four-step scheme: z-map, PDE for theta, forward Euler-Maruyama through
/// theta, backward reconstruction.
pub fn four_step_solve(
    spec: &BsdeSpec,
    grids: &PdeGrids,
    paths: usize,
    seed: u64,
) -> Result<FbsdeSolution> {
    let theta = solve_quasilinear_pde(spec, grids)?;
    let steps = grids.t_steps;
    let dt = spec.t_end / steps as f64;
    let sqrt_dt = dt.sqrt();

    let results: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::substream(seed, p as u64);
            let mut x = spec.x0;
            let mut xs = Vec::with_capacity(steps + 1);
            let mut ys = Vec::with_capacity(steps + 1);
            let mut zs = Vec::with_capacity(steps + 1);
            for k in 0..=steps {
                let t = k as f64 * dt;
                let y = theta.eval_at_node(k, x);
                let slope = theta.x_derivative(k, x);
                let z = z_map(&spec.volatility, t, x, y, slope).unwrap_or(f64::NAN);
                xs.push(x);
                ys.push(y);
                zs.push(z);
                if k < steps {
                    let b = (spec.drift)(t, x, y);
                    let s = spec.volatility.eval(t, x, y, slope).unwrap_or(f64::NAN);
                    x += b * dt + s * sqrt_dt * rng::normal(&mut r);
                }
            }
            (xs, ys, zs)
        })
        .collect();

    let mut x_paths = Vec::with_capacity(paths);
    let mut y_paths = Vec::with_capacity(paths);
    let mut z_paths = Vec::with_capacity(paths);
    for (xs, ys, zs) in results {
        if xs.iter().any(|v| !v.is_finite()) || zs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(
                "forward path left the computable domain".into(),
            ));
        }
        x_paths.push(xs);
        y_paths.push(ys);
        z_paths.push(zs);
    }

    let terminal_consistency = x_paths
        .iter()
        .zip(&y_paths)
        .map(|(xs, ys)| (ys[steps] - (spec.terminal)(xs[steps])).abs())
        .sum::<f64>()
        / paths as f64;

    Ok(FbsdeSolution {
        y0: theta.eval_at_node(0, spec.x0),
        theta,
        x_paths,
        y_paths,
        z_paths,
        terminal_consistency,
    })
}

/// The coupled linear system `dX = (X+Y)(dt + dW)`, `dY = (X+Y)dt + Z dW`
/// with the bounded smooth terminal `g(x) = tanh(x)` (chosen so the problem
/// stays well posed).
pub fn linear_coupled_instance(x0: f64, t_end: f64) -> BsdeSpec {
    BsdeSpec::new(
        |_, x, y| x + y,
        Volatility::of(|_, x, y| x + y),
        |_, x, y, _| x + y,
        |x: f64| x.tanh(),
        x0,
        t_end,
        2.0,
    )
    .expect("static instance")
}
