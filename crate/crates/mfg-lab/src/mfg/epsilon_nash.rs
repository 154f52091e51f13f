//! How good is the infinite-game feedback in the finite game?
//!
//! N players run the equilibrium feedback; the realized empirical flow is
//! frozen; player 1's best deviation against that flow is computed by
//! re-solving the single-agent problem; the deviation gain (with a paired
//! Monte Carlo confidence interval) estimates the epsilon of the induced
//! Markovian approximate Nash equilibrium.

use super::{control_cost, solve_agent_decoupling, MfgEquilibrium, MfgProblem};
use crate::error::{Error, Result};
use crate::fbsde::pde::PdeGrids;
use crate::measures::{uniform_grid, EmpiricalMeasure, MeasureFlow};
use crate::rng;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct EpsilonNashEstimate {
    /// max(0, J(equilibrium feedback) - J(best deviation)).
    pub epsilon_hat: f64,
    /// 95% halfwidth of the paired cost difference.
    pub ci_halfwidth: f64,
    pub cost_equilibrium: f64,
    pub cost_deviation: f64,
    /// Realized empirical flow of the N-player run.
    pub realized_flow: MeasureFlow,
}

/// Simulate the N-player system under a common Markovian feedback, coupled
/// through the running empirical measure, and return the realized flow.
pub fn simulate_finite_game(
    p: &MfgProblem,
    eq: &MfgEquilibrium,
    n_players: usize,
    seed: u64,
) -> Result<MeasureFlow> {
    if n_players < 2 {
        return Err(Error::invalid("need at least two players"));
    }
    let steps = eq.flow.len() - 1;
    let dt = p.t_end / steps as f64;
    let sqrt_dt = dt.sqrt();
    let times = uniform_grid(p.t_end, steps)?;

    let mut rngs: Vec<_> = (0..n_players)
        .map(|i| rng::substream(seed, i as u64))
        .collect();
    let mut current: Vec<f64> = rngs.iter_mut().map(|r| p.mu0.sample(r)).collect();
    let mut measures = Vec::with_capacity(steps + 1);
    measures.push(EmpiricalMeasure::from_samples(&current)?);
    for k in 0..steps {
        let t = k as f64 * dt;
        let empirical = measures.last().unwrap().clone();
        let next: Vec<f64> = current
            .par_iter()
            .zip(rngs.par_iter_mut())
            .map(|(&x, r)| {
                let a = eq
                    .control_field
                    .eval_at_node(k, x)
                    .clamp(p.action_min, p.action_max);
                x + p.drift(t, x, &empirical, a) * dt + p.sigma * sqrt_dt * rng::normal(r)
            })
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "finite game blew up at step {}",
                k + 1
            )));
        }
        current = next;
        measures.push(EmpiricalMeasure::from_samples(&current)?);
    }
    MeasureFlow::new(times, measures)
}

/// Estimate the epsilon of the equilibrium feedback in the N-player game.
///
/// `deviation_paths` is the Monte Carlo budget for the two paired cost
/// evaluations (equilibrium feedback vs. re-optimized deviation, both
/// against the frozen realized flow).
pub fn epsilon_nash_estimate(
    p: &MfgProblem,
    eq: &MfgEquilibrium,
    grids: &PdeGrids,
    n_players: usize,
    deviation_paths: usize,
    seed: u64,
) -> Result<EpsilonNashEstimate> {
    let realized = simulate_finite_game(p, eq, n_players, seed)?;
    // Best response against the frozen realized flow.
    let deviation = solve_agent_decoupling(p, &realized, grids)?;

    let eq_field = &eq.control_field;
    let dev_field = &deviation.control;
    let cost_seed = seed ^ 0x00e5_71aa;
    let j_eq = control_cost(
        p,
        &realized,
        &|k, x| eq_field.eval_at_node(k, x),
        deviation_paths,
        cost_seed,
    )?;
    let j_dev = control_cost(
        p,
        &realized,
        &|k, x| dev_field.eval_at_node(k, x),
        deviation_paths,
        cost_seed,
    )?;
    // Paired difference: same seeds, same noise.
    let diffs: Vec<f64> = j_eq
        .samples
        .iter()
        .zip(&j_dev.samples)
        .map(|(a, b)| a - b)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    Ok(EpsilonNashEstimate {
        epsilon_hat: mean.max(0.0),
        ci_halfwidth: 1.96 * (var / n).sqrt(),
        cost_equilibrium: j_eq.mean,
        cost_deviation: j_dev.mean,
        realized_flow: realized,
    })
}

/// Deviation gain of a player who "deviates" to the equilibrium feedback
/// itself: identically zero by construction, kept as a self-test hook.
pub fn self_deviation_gain(
    p: &MfgProblem,
    eq: &MfgEquilibrium,
    n_players: usize,
    paths: usize,
    seed: u64,
) -> Result<f64> {
    let realized = simulate_finite_game(p, eq, n_players, seed)?;
    let field = &eq.control_field;
    let j1 = control_cost(p, &realized, &|k, x| field.eval_at_node(k, x), paths, seed)?;
    let j2 = control_cost(p, &realized, &|k, x| field.eval_at_node(k, x), paths, seed)?;
    Ok((j1.mean - j2.mean).abs())
}
