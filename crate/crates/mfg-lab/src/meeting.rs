//! The "when does the meeting start?" game.
//!
//! A continuum of symmetric players pick target arrival times; realized
//! arrivals are the target plus scaled Gaussian noise, the meeting starts at
//! a quantile of the arrival distribution (never before the scheduled time),
//! and each player balances reputation, inconvenience and early-arrival
//! costs. The best-response time solves a monotone scalar equation, and the
//! equilibrium is the fixed point of the best-response map, found by Picard
//! iteration with an explicit degeneracy check.

use crate::error::{Error, Result};
use crate::measures::{DistributionSpec, EmpiricalMeasure};
use crate::rng::{self, norm_cdf, norm_pdf};

/// Number of atoms used to discretize a continuous noise-scale law at
/// construction; the noise CDF is then a finite normal mixture everywhere.
const SCALE_LAW_RESOLUTION: usize = 201;

/// Cost weights, schedule and noise law of the meeting game.
#[derive(Debug, Clone)]
pub struct MeetingSpec {
    /// Reputation cost weight (late past the scheduled time).
    pub a_cost: f64,
    /// Inconvenience cost weight (late past the actual start).
    pub b_cost: f64,
    /// Early-arrival cost weight.
    pub c_cost: f64,
    /// Scheduled time.
    pub t0: f64,
    /// Law of the noise scale sigma; support must be strictly positive.
    pub nu: DistributionSpec,
    /// Start rule quantile (the organisers wait for this fraction).
    pub rule_quantile: f64,
    /// End of the admissible window [0, E]; a validation bound only.
    pub t_end: f64,
    /// Atoms (scale, weight) the noise law is evaluated through.
    scale_atoms: Vec<(f64, f64)>,
}

impl MeetingSpec {
    pub fn new(
        a_cost: f64,
        b_cost: f64,
        c_cost: f64,
        t0: f64,
        nu: DistributionSpec,
    ) -> Result<Self> {
        Self::with_rule(a_cost, b_cost, c_cost, t0, nu, 0.75, 24.0)
    }

    pub fn with_rule(
        a_cost: f64,
        b_cost: f64,
        c_cost: f64,
        t0: f64,
        nu: DistributionSpec,
        rule_quantile: f64,
        t_end: f64,
    ) -> Result<Self> {
        if !(a_cost > 0.0 && b_cost > 0.0 && c_cost > 0.0) {
            return Err(Error::invalid("cost weights A, B, C must be positive"));
        }
        if !(rule_quantile > 0.0 && rule_quantile < 1.0) {
            return Err(Error::invalid("rule quantile must lie in (0,1)"));
        }
        if !(0.0..=t_end).contains(&t0) {
            return Err(Error::invalid("scheduled time must lie in [0, E]"));
        }
        nu.validate()?;
        if !(nu.support_min() > 0.0) {
            return Err(Error::invalid(
                "noise scale law must have strictly positive support",
            ));
        }
        let atoms = nu.to_atoms(SCALE_LAW_RESOLUTION)?;
        let scale_atoms: Vec<(f64, f64)> = atoms
            .points()
            .iter()
            .copied()
            .zip(atoms.weights().iter().copied())
            .collect();
        Ok(MeetingSpec {
            a_cost,
            b_cost,
            c_cost,
            t0,
            nu,
            rule_quantile,
            t_end,
            scale_atoms,
        })
    }

    /// CDF of the idiosyncratic shock Z = sigma * eps: a mixture of normal
    /// CDFs over the scale law. Strictly increasing and symmetric about 0.
    pub fn noise_cdf(&self, z: f64) -> f64 {
        self.scale_atoms
            .iter()
            .map(|&(s, w)| w * norm_cdf(z / s))
            .sum()
    }

    /// Density of the shock law.
    pub fn noise_pdf(&self, z: f64) -> f64 {
        self.scale_atoms
            .iter()
            .map(|&(s, w)| w * norm_pdf(z / s) / s)
            .sum()
    }

    /// Quantile of the shock law by bisection on the mixture CDF.
    pub fn noise_quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::invalid("noise quantile level must lie in (0,1)"));
        }
        let s_max = self
            .scale_atoms
            .iter()
            .map(|&(s, _)| s)
            .fold(0.0, f64::max);
        let (mut lo, mut hi) = (-40.0 * s_max, 40.0 * s_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.noise_cdf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Start rule tau: the rule quantile of the arrival distribution,
    /// floored at the scheduled time. Satisfies "never before t0", FOSD
    /// monotonicity and sub-additivity.
    pub fn tau_rule(&self, arrivals: &EmpiricalMeasure) -> f64 {
        let q = arrivals
            .quantile(self.rule_quantile)
            .expect("rule quantile validated in (0,1)");
        self.t0.max(q)
    }

    /// Best-response target time against a presumed start time `t_star`:
    /// the unique root of A F(t - t0) + (B+C) F(t - T*) = C, found by
    /// bisection on an expanding bracket.
    pub fn best_response_time(&self, t_star: f64) -> Result<f64> {
        let f = |t: f64| {
            self.a_cost * self.noise_cdf(t - self.t0)
                + (self.b_cost + self.c_cost) * self.noise_cdf(t - t_star)
                - self.c_cost
        };
        let center = self.t0.min(t_star);
        let mut half = 1.0;
        let mut lo = center - half;
        let mut hi = self.t0.max(t_star) + half;
        let mut doublings = 0;
        while f(lo) > 0.0 || f(hi) < 0.0 {
            doublings += 1;
            if doublings > 60 {
                return Err(Error::NumericalFailure(
                    "best-response bracket expansion exceeded 60 doublings".into(),
                ));
            }
            half *= 2.0;
            lo = center - half;
            hi = self.t0.max(t_star) + half;
        }
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let v = f(mid);
            if v.abs() <= 1e-13 {
                break;
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if f(mid).abs() > 1e-10 {
            return Err(Error::NumericalFailure(format!(
                "best-response residual {} above 1e-10",
                f(mid)
            )));
        }
        Ok(mid)
    }

    /// The best-response map G whose fixed point is the equilibrium: the
    /// best-response time floored at the scheduled time, because the start
    /// rule never lets the meeting begin before t0. Without the floor the
    /// raw best response has no fixed point whenever early arrival is cheap
    /// enough that targets drift below the schedule.
    pub fn response_map(&self, t_star: f64) -> Result<f64> {
        Ok(self.t0.max(self.best_response_time(t_star)?))
    }

    /// Contraction factor of G at `t_star` from the implicit-function
    /// derivative of the best-response equation.
    pub fn contraction_at(&self, t_star: f64) -> Result<f64> {
        let t_hat = self.best_response_time(t_star)?;
        let bc = self.b_cost + self.c_cost;
        let num = bc * self.noise_pdf(t_hat - t_star);
        let den = self.a_cost * self.noise_pdf(t_hat - self.t0) + num;
        Ok(num / den)
    }
}

/// Result of the equilibrium solve.
#[derive(Debug, Clone)]
pub struct MeetingEquilibrium {
    /// Fixed point of the best-response map.
    pub t_star: f64,
    /// |G(t_star) - t_star|.
    pub residual: f64,
    pub iterations: usize,
    /// Contraction factor at the fixed point from the derivative formula.
    pub contraction_estimate: f64,
    /// Last observed ratio |dT_{k+1}| / |dT_k| along the Picard trajectory.
    pub empirical_contraction: f64,
    /// Picard trajectory (iterate, residual) for reporting.
    pub iterates: Vec<(f64, f64)>,
}

/// Picard iteration T <- G(T) from the scheduled time until the update is
/// below `tol`. A run of steps with ratio ~ 1 is reported as the degenerate
/// regime instead of looping forever.
pub fn solve_equilibrium(spec: &MeetingSpec, tol: f64) -> Result<MeetingEquilibrium> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let mut t = spec.t0;
    let mut prev_step: Option<f64> = None;
    let mut near_identity_run = 0usize;
    let mut iterates = Vec::new();
    let mut empirical = f64::NAN;
    for iteration in 1..=10_000 {
        let next = spec.response_map(t)?;
        let step = (next - t).abs();
        iterates.push((next, step));
        if let Some(p) = prev_step {
            if p > 0.0 {
                empirical = step / p;
                if empirical >= 1.0 - 1e-9 {
                    near_identity_run += 1;
                } else {
                    near_identity_run = 0;
                }
                if near_identity_run >= 5 {
                    return Err(Error::Degenerate(
                        "best-response map is (numerically) the identity: the A -> 0 \
                         regime with B = C has contraction factor 1 and no isolated \
                         fixed point"
                            .into(),
                    ));
                }
            }
        }
        prev_step = Some(step);
        t = next;
        if step <= tol {
            let residual = (spec.response_map(t)? - t).abs();
            let contraction_estimate = spec.contraction_at(t)?;
            // The A -> 0 regime pseudo-converges instantly from T = t0, so
            // the identity map is also detected analytically.
            if contraction_estimate >= 1.0 - 1e-9 {
                return Err(Error::Degenerate(
                    "best-response map is (numerically) the identity at the fixed \
                     point: the A -> 0 regime with B = C has contraction factor 1"
                        .into(),
                ));
            }
            return Ok(MeetingEquilibrium {
                t_star: t,
                residual,
                iterations: iteration,
                contraction_estimate,
                empirical_contraction: if empirical.is_nan() {
                    contraction_estimate
                } else {
                    empirical
                },
                iterates,
            });
        }
    }
    Err(Error::NonConvergence {
        context: "meeting-game Picard iteration".into(),
        residuals: iterates.iter().rev().take(10).map(|p| p.1).collect(),
    })
}

/// Extension of the model: make the start time self-consistent with the
/// rule applied to the limiting arrival law, solving
/// T = max(t0, t_hat(T) + F^{-1}(rule quantile)). The baseline fixed point
/// equates the best response with the start time directly; this variant is
/// provided for comparison and clearly labeled as an extension.
pub fn solve_equilibrium_self_consistent(
    spec: &MeetingSpec,
    tol: f64,
) -> Result<MeetingEquilibrium> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let shock_q = spec.noise_quantile(spec.rule_quantile)?;
    let map = |t: f64| -> Result<f64> {
        Ok(spec.t0.max(spec.best_response_time(t)? + shock_q))
    };
    let mut t = spec.t0;
    let mut iterates = Vec::new();
    for iteration in 1..=10_000 {
        let next = map(t)?;
        let step = (next - t).abs();
        iterates.push((next, step));
        t = next;
        if step <= tol {
            let residual = (map(t)? - t).abs();
            return Ok(MeetingEquilibrium {
                t_star: t,
                residual,
                iterations: iteration,
                contraction_estimate: spec.contraction_at(t)?,
                empirical_contraction: f64::NAN,
                iterates,
            });
        }
    }
    Err(Error::NonConvergence {
        context: "self-consistent meeting fixed point".into(),
        residuals: iterates.iter().rev().take(10).map(|p| p.1).collect(),
    })
}

/// One realization of the finite game: N players target `equilibrium_t`,
/// arrivals pick up their idiosyncratic shocks, and the rule is applied to
/// the realized empirical distribution. Returns the realized start time.
///
/// Per-player draws come from counter-derived substreams, so the result does
/// not depend on evaluation order.
pub fn simulate_finite(
    spec: &MeetingSpec,
    equilibrium_t: f64,
    n_players: usize,
    seed: u64,
) -> Result<f64> {
    if n_players == 0 {
        return Err(Error::invalid("need at least one player"));
    }
    let arrivals: Vec<f64> = (0..n_players)
        .map(|i| {
            let mut stream = rng::substream(seed, i as u64);
            let scale = spec.nu.sample(&mut stream);
            let eps = rng::normal(&mut stream);
            equilibrium_t + scale * eps
        })
        .collect();
    let empirical = EmpiricalMeasure::from_samples(&arrivals)?;
    Ok(spec.tau_rule(&empirical))
}
