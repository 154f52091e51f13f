//! Interacting diffusions and the nonlinear (McKean-Vlasov) process.
//!
//! The N-particle system couples particles through the empirical average of
//! a pairwise drift kernel; the nonlinear process replaces that average with
//! an integral against its own law, recovered here by Picard iteration on
//! the measure flow with common random numbers. Setting the volatility to
//! zero degenerates the system to deterministic transport.

use crate::error::{Error, Result};
use crate::measures::{uniform_grid, DistributionSpec, EmpiricalMeasure, MeasureFlow};
use crate::rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

/// States above this magnitude abort the simulation: Lipschitz kernels
/// never reach it, so tripping it signals a bad kernel.
pub const BLOW_UP_BOUND: f64 = 1e8;

/// One monomial `coef * x^own_pow * y^other_pow` of a pairwise drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyTerm {
    pub own_pow: u32,
    pub other_pow: u32,
    pub coef: f64,
}

#[derive(Clone)]
enum KernelForm {
    /// Sum of monomials; the empirical average reduces to moments of the
    /// crowd, evaluated in O(degree) per particle.
    Polynomial(Vec<PolyTerm>),
    /// Arbitrary kernel, averaged by direct summation.
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

/// Pairwise interaction drift `b(x, y)` with its declared Lipschitz bound.
#[derive(Clone)]
pub struct DriftKernel {
    form: KernelForm,
    pub lipschitz_bound: f64,
    pub name: String,
}

impl std::fmt::Debug for DriftKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DriftKernel({}, L={})", self.name, self.lipschitz_bound)
    }
}

impl DriftKernel {
    /// No interaction, no drift.
    pub fn zero() -> Self {
        DriftKernel {
            form: KernelForm::Polynomial(vec![]),
            lipschitz_bound: 0.0,
            name: "zero".into(),
        }
    }

    /// `b(x, y) = -x`: mean reversion to the origin, no interaction.
    pub fn ou() -> Self {
        DriftKernel {
            form: KernelForm::Polynomial(vec![PolyTerm {
                own_pow: 1,
                other_pow: 0,
                coef: -1.0,
            }]),
            lipschitz_bound: 1.0,
            name: "ou".into(),
        }
    }

    /// `b(x, y) = y - x`: each particle is pulled toward the crowd.
    pub fn linear_pull() -> Self {
        DriftKernel {
            form: KernelForm::Polynomial(vec![
                PolyTerm {
                    own_pow: 0,
                    other_pow: 1,
                    coef: 1.0,
                },
                PolyTerm {
                    own_pow: 1,
                    other_pow: 0,
                    coef: -1.0,
                },
            ]),
            lipschitz_bound: 1.0,
            name: "linear_pull".into(),
        }
    }

    pub fn polynomial(terms: Vec<PolyTerm>, lipschitz_bound: f64) -> Self {
        DriftKernel {
            form: KernelForm::Polynomial(terms),
            lipschitz_bound,
            name: "polynomial".into(),
        }
    }

    pub fn custom(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        lipschitz_bound: f64,
        name: impl Into<String>,
    ) -> Self {
        DriftKernel {
            form: KernelForm::Custom(Arc::new(f)),
            lipschitz_bound,
            name: name.into(),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match &self.form {
            KernelForm::Polynomial(terms) => terms
                .iter()
                .map(|t| t.coef * x.powi(t.own_pow as i32) * y.powi(t.other_pow as i32))
                .sum(),
            KernelForm::Custom(f) => f(x, y),
        }
    }

    /// Highest power of the crowd variable, if polynomial.
    fn crowd_degree(&self) -> Option<u32> {
        match &self.form {
            KernelForm::Polynomial(terms) => {
                Some(terms.iter().map(|t| t.other_pow).max().unwrap_or(0))
            }
            KernelForm::Custom(_) => None,
        }
    }

    /// Spot-check the declared Lipschitz bound on random pairs inside
    /// `[-range, range]`; used by tests and config validation.
    pub fn check_lipschitz(&self, range: f64, trials: usize, seed: u64) -> Result<()> {
        let mut stream = rng::substream(seed, 0);
        for _ in 0..trials {
            let draw = |r: &mut ChaCha8Rng| (rand::Rng::random::<f64>(r) * 2.0 - 1.0) * range;
            let (x, y, x2, y2) = (
                draw(&mut stream),
                draw(&mut stream),
                draw(&mut stream),
                draw(&mut stream),
            );
            let lhs = (self.eval(x, y) - self.eval(x2, y2)).abs();
            let rhs = self.lipschitz_bound * ((x - x2).abs() + (y - y2).abs());
            if lhs > rhs + 1e-9 {
                return Err(Error::invalid(format!(
                    "kernel {} violates its declared Lipschitz bound: |b({x},{y}) - b({x2},{y2})| = {lhs} > {rhs}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Average of the kernel against a weighted atom set, `sum_j w_j b(x, y_j)`.
fn mean_field_drift(
    kernel: &DriftKernel,
    x: f64,
    atoms: &[f64],
    weights: Option<&[f64]>,
    crowd_moments: Option<&[f64]>,
) -> f64 {
    match (&kernel.form, crowd_moments) {
        (KernelForm::Polynomial(terms), Some(moments)) => terms
            .iter()
            .map(|t| t.coef * x.powi(t.own_pow as i32) * moments[t.other_pow as usize])
            .sum(),
        _ => match weights {
            Some(w) => atoms
                .iter()
                .zip(w)
                .map(|(&y, &wy)| wy * kernel.eval(x, y))
                .sum(),
            None => {
                let n = atoms.len() as f64;
                atoms.iter().map(|&y| kernel.eval(x, y)).sum::<f64>() / n
            }
        },
    }
}

fn raw_moments(atoms: &[f64], weights: Option<&[f64]>, order: u32) -> Vec<f64> {
    let n = atoms.len() as f64;
    (0..=order)
        .map(|k| match weights {
            Some(w) => atoms
                .iter()
                .zip(w)
                .map(|(&y, &wy)| wy * y.powi(k as i32))
                .sum(),
            None => atoms.iter().map(|&y| y.powi(k as i32)).sum::<f64>() / n,
        })
        .collect()
}

/// Coefficients and grid of an interacting-diffusion simulation.
#[derive(Debug, Clone)]
pub struct McKeanSpec {
    pub kernel: DriftKernel,
    pub sigma: f64,
    pub mu0: DistributionSpec,
    pub t_end: f64,
    pub dt: f64,
}

impl McKeanSpec {
    pub fn new(
        kernel: DriftKernel,
        sigma: f64,
        mu0: DistributionSpec,
        t_end: f64,
        dt: f64,
    ) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::invalid("volatility must be nonnegative"));
        }
        if !(dt > 0.0) || !(t_end > 0.0) {
            return Err(Error::invalid("need positive dt and horizon"));
        }
        let steps = (t_end / dt).round();
        if (steps * dt - t_end).abs() > 1e-12 * t_end.max(1.0) {
            return Err(Error::invalid(format!(
                "dt = {dt} does not divide the horizon {t_end}"
            )));
        }
        mu0.validate()?;
        Ok(McKeanSpec {
            kernel,
            sigma,
            mu0,
            t_end,
            dt,
        })
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Stored paths of an N-particle run.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub times: Vec<f64>,
    /// `states[i][k]` is particle i at time node k.
    pub states: Vec<Vec<f64>>,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn particle_count(&self) -> usize {
        self.states.len()
    }

    /// Cross-section at a grid node.
    pub fn cross_section(&self, node: usize) -> Vec<f64> {
        self.states.iter().map(|path| path[node]).collect()
    }

    pub fn empirical_at(&self, node: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_samples(&self.cross_section(node))
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()))
            .ok_or_else(|| Error::invalid(format!("time {t} is not on the ensemble grid")))
    }
}

/// Law of the nonlinear process together with the Picard residual history.
#[derive(Debug, Clone)]
pub struct NonlinearProcessSolution {
    pub flow: MeasureFlow,
    pub picard_residuals: Vec<f64>,
}

/// Euler-Maruyama simulation of the N-particle interacting system. Noise is
/// independent per particle (no common noise), drawn from per-particle
/// substreams so parallel and serial runs agree bit for bit.
pub fn simulate_interacting(spec: &McKeanSpec, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::invalid("need at least one particle"));
    }
    let steps = spec.steps();
    let times = uniform_grid(spec.t_end, steps)?;
    let sqrt_dt = spec.dt.sqrt();

    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| rng::substream(seed, i as u64)).collect();
    let mut current: Vec<f64> = rngs.iter_mut().map(|r| spec.mu0.sample(r)).collect();
    let mut states: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut path = Vec::with_capacity(steps + 1);
            path.push(current[i]);
            path
        })
        .collect();

    let degree = spec.kernel.crowd_degree();
    for k in 0..steps {
        let moments = degree.map(|d| raw_moments(&current, None, d));
        let next: Vec<f64> = current
            .par_iter()
            .zip(rngs.par_iter_mut())
            .map(|(&x, r)| {
                let drift =
                    mean_field_drift(&spec.kernel, x, &current, None, moments.as_deref());
                x + drift * spec.dt + spec.sigma * sqrt_dt * rng::normal(r)
            })
            .collect();
        if let Some(bad) = next.iter().position(|x| !x.is_finite() || x.abs() > BLOW_UP_BOUND) {
            return Err(Error::NumericalFailure(format!(
                "particle state blew up at step {} (t = {:.6}), particle {bad}",
                k + 1,
                times[k + 1]
            )));
        }
        current = next;
        for (i, path) in states.iter_mut().enumerate() {
            path.push(current[i]);
        }
    }
    Ok(ParticleEnsemble { times, states, seed })
}

/// Law of the nonlinear process by Picard iteration on the measure flow.
///
/// Each sweep simulates `m` representation particles against the frozen
/// flow with common random numbers, so the residual measures drift change
/// rather than resampling noise; the initial guess is the flow of the
/// interaction-free process.
pub fn solve_nonlinear(
    spec: &McKeanSpec,
    m: usize,
    tol: f64,
    seed: u64,
) -> Result<NonlinearProcessSolution> {
    solve_nonlinear_with(spec, m, tol, seed, 200)
}

pub fn solve_nonlinear_with(
    spec: &McKeanSpec,
    m: usize,
    tol: f64,
    seed: u64,
    max_iters: usize,
) -> Result<NonlinearProcessSolution> {
    if m < 10 {
        return Err(Error::invalid("need at least 10 representation particles"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let steps = spec.steps();
    let times = uniform_grid(spec.t_end, steps)?;
    let degree = spec.kernel.crowd_degree();

    // One sweep against a frozen flow (None = no interaction drift).
    let sweep = |flow: Option<&MeasureFlow>| -> Result<MeasureFlow> {
        let mut rngs: Vec<ChaCha8Rng> =
            (0..m).map(|i| rng::substream(seed, i as u64)).collect();
        let mut current: Vec<f64> = rngs.iter_mut().map(|r| spec.mu0.sample(r)).collect();
        let sqrt_dt = spec.dt.sqrt();
        let mut measures = Vec::with_capacity(steps + 1);
        measures.push(EmpiricalMeasure::from_samples(&current)?);
        for k in 0..steps {
            let frozen = flow.map(|f| f.at(k));
            let moments = match (frozen, degree) {
                (Some(mu), Some(d)) => Some(raw_moments(mu.points(), Some(mu.weights()), d)),
                _ => None,
            };
            let next: Vec<f64> = current
                .par_iter()
                .zip(rngs.par_iter_mut())
                .map(|(&x, r)| {
                    let drift = match frozen {
                        Some(mu) => mean_field_drift(
                            &spec.kernel,
                            x,
                            mu.points(),
                            Some(mu.weights()),
                            moments.as_deref(),
                        ),
                        None => 0.0,
                    };
                    x + drift * spec.dt + spec.sigma * sqrt_dt * rng::normal(r)
                })
                .collect();
            if next.iter().any(|x| !x.is_finite() || x.abs() > BLOW_UP_BOUND) {
                return Err(Error::NumericalFailure(format!(
                    "nonlinear-process sweep blew up at step {}",
                    k + 1
                )));
            }
            current = next;
            measures.push(EmpiricalMeasure::from_samples(&current)?);
        }
        MeasureFlow::new(times.clone(), measures)
    };

    let mut flow = sweep(None)?;
    let mut residuals = Vec::new();
    for _ in 0..max_iters {
        let next = sweep(Some(&flow))?;
        let residual = next.sup_wasserstein1(&flow)?;
        residuals.push(residual);
        flow = next;
        if residual <= tol {
            return Ok(NonlinearProcessSolution {
                flow,
                picard_residuals: residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        context: format!("nonlinear process Picard iteration ({max_iters} sweeps)"),
        residuals,
    })
}

/// Wasserstein-1 gap between a finite ensemble and the nonlinear process at
/// time `t` (propagation-of-chaos diagnostic).
pub fn chaos_gap(
    ensemble: &ParticleEnsemble,
    solution: &NonlinearProcessSolution,
    t: f64,
) -> Result<f64> {
    let node_e = ensemble.index_of(t)?;
    let node_s = solution.flow.index_of(t)?;
    let empirical = ensemble.empirical_at(node_e)?;
    Ok(crate::measures::wasserstein1(
        &empirical,
        solution.flow.at(node_s),
    ))
}
