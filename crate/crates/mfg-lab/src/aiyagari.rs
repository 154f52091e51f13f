//! Continuous-time Aiyagari model.
//!
//! Households with CRRA utility accumulate capital under idiosyncratic
//! labor shocks; a Cobb-Douglas firm prices capital and labor from the mean
//! capital stock; the aggregate equilibrium is a forward-backward ODE pair
//! (mean capital forward, adjoint backward from `Y(T) = 1`) solved by a
//! damped sweep. A household panel simulation checks that the aggregate
//! path is consistent with the mean-field interaction it came from.
//!
//! Where the source equations print mutually inconsistent coefficients the
//! solver exposes both variants behind flags (`WageConvention`,
//! `paper_exact_ode`, `printed_aggregate`, `include_beta`); the defaults
//! keep the model internally consistent with its own firm first-order
//! conditions, and every variant is tested against its own right-hand
//! sides.

use crate::error::{Error, Result};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Wage formula used by [`firm_prices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WageConvention {
    /// `w = K^a` exactly as printed in the firm first-order conditions.
    PaperExact,
    /// `w = (1 - a) K^a`, the Cobb-Douglas marginal product of labor;
    /// satisfies the exhaustion identity `(r + delta) K + w = K^a`.
    Derived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaborKind {
    /// Mean-reverting around 1, clamped to the support bounds.
    Ou,
    /// Driftless geometric motion (martingale), clamped to the support.
    Gbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaborSpec {
    pub kind: LaborKind,
    pub vol: f64,
    /// Mean-reversion rate (used by the OU kind).
    pub reversion: f64,
}

/// Model primitives and solver flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AiyagariSpec {
    /// CRRA coefficient.
    pub gamma: f64,
    /// Capital share a of the Cobb-Douglas technology.
    pub alpha_share: f64,
    /// Depreciation rate.
    pub delta: f64,
    /// Utility discount rate.
    pub beta: f64,
    /// Raw borrowing limit b >= 0.
    pub b_limit: f64,
    pub labor: LaborSpec,
    pub l_min: f64,
    pub l_max: f64,
    pub t_end: f64,
    /// Initial mean capital.
    pub k0: f64,
    pub foc_convention: WageConvention,
    /// Use the printed `1 - a` exponent in the adjoint rate instead of the
    /// `a - 1` exponent implied by the firm conditions.
    pub paper_exact_ode: bool,
    /// Use the printed aggregate capital drift verbatim instead of the
    /// term-by-term expectation of the household budget.
    pub printed_aggregate: bool,
    /// Include the `-beta Y` discount term in the adjoint rate.
    pub include_beta: bool,
}

impl AiyagariSpec {
    /// Baseline calibration; flags at their internally consistent defaults.
    pub fn baseline() -> Self {
        AiyagariSpec {
            gamma: 2.0,
            alpha_share: 0.36,
            delta: 0.08,
            beta: 0.05,
            b_limit: 0.0,
            labor: LaborSpec {
                kind: LaborKind::Ou,
                vol: 0.4,
                reversion: 2.0,
            },
            l_min: 0.2,
            l_max: 1.8,
            t_end: 50.0,
            k0: 4.0,
            foc_convention: WageConvention::Derived,
            paper_exact_ode: false,
            printed_aggregate: false,
            include_beta: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if !(self.alpha_share > 0.0 && self.alpha_share < 1.0) {
            return Err(Error::invalid("capital share must lie in (0,1)"));
        }
        if !(self.delta >= 0.0 && self.beta >= 0.0 && self.b_limit >= 0.0) {
            return Err(Error::invalid("delta, beta, b must be nonnegative"));
        }
        if !(self.l_min > 0.0 && self.l_min <= 1.0 && self.l_max >= 1.0) {
            return Err(Error::invalid(
                "labor support must satisfy 0 < l_min <= 1 <= l_max",
            ));
        }
        if !(self.t_end > 0.0 && self.k0 > 0.0) {
            return Err(Error::invalid("need positive horizon and initial capital"));
        }
        if !(self.labor.vol >= 0.0 && self.labor.reversion >= 0.0) {
            return Err(Error::invalid("labor parameters must be nonnegative"));
        }
        Ok(())
    }

    /// Adjoint rate rho(K): `dY = -rho(K) Y dt`.
    pub fn adjoint_rate(&self, k: f64) -> f64 {
        let a = self.alpha_share;
        let base = if self.paper_exact_ode {
            a * k.powf(1.0 - a) - self.delta
        } else {
            a * k.powf(a - 1.0) - self.delta
        };
        if self.include_beta {
            base - self.beta
        } else {
            base
        }
    }

    /// Mean-capital drift given the adjoint value.
    pub fn capital_rhs(&self, k: f64, y: f64, phi: f64) -> f64 {
        let a = self.alpha_share;
        let consumption = optimal_consumption(y, self.gamma).unwrap_or(f64::NAN);
        if self.printed_aggregate {
            k.powf(a) - a * phi * k.powf(a - 1.0) - self.delta * k + self.delta * phi
                - consumption
        } else {
            let (r, w) = firm_prices(k, self).unwrap_or((f64::NAN, f64::NAN));
            w + r * (k - phi) - consumption
        }
    }

    /// Capital level at which the adjoint rate vanishes (the long-horizon
    /// turnpike level under the chosen flags).
    pub fn steady_state_capital(&self) -> f64 {
        let a = self.alpha_share;
        let target = self.delta + if self.include_beta { self.beta } else { 0.0 };
        if self.paper_exact_ode {
            (target / a).powf(1.0 / (1.0 - a))
        } else {
            (a / target).powf(1.0 / (1.0 - a))
        }
    }
}

/// CRRA utility `(c^{1-gamma} - 1) / (1 - gamma)`, logarithmic at
/// `gamma = 1`.
pub fn crra_utility(c: f64, gamma: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::invalid("consumption must be positive"));
    }
    if (gamma - 1.0).abs() < 1e-12 {
        Ok(c.ln())
    } else {
        Ok((c.powf(1.0 - gamma) - 1.0) / (1.0 - gamma))
    }
}

/// Marginal utility `c^{-gamma}`.
pub fn crra_marginal(c: f64, gamma: f64) -> f64 {
    c.powf(-gamma)
}

/// Factor prices from the firm first-order conditions at mean capital `K`
/// (labor normalized to one): `r = a K^{a-1} - delta` and the wage per the
/// chosen convention.
pub fn firm_prices(k: f64, spec: &AiyagariSpec) -> Result<(f64, f64)> {
    if !(k > 0.0) {
        return Err(Error::invalid("mean capital must be positive"));
    }
    let a = self_share(spec);
    let r = a * k.powf(a - 1.0) - spec.delta;
    let w = match spec.foc_convention {
        WageConvention::PaperExact => k.powf(a),
        WageConvention::Derived => (1.0 - a) * k.powf(a),
    };
    Ok((r, w))
}

fn self_share(spec: &AiyagariSpec) -> f64 {
    spec.alpha_share
}

/// Borrowing constraint `phi = min(b, w l_min / r)` when `r > 0`, else `b`.
pub fn borrowing_limit(spec: &AiyagariSpec, r: f64, w: f64) -> f64 {
    if r > 0.0 {
        spec.b_limit.min(w * spec.l_min / r)
    } else {
        spec.b_limit
    }
}

/// Consumption rule from the adjoint: `c = Y^{-1/gamma}`, so that
/// `U'(c) = Y` exactly.
pub fn optimal_consumption(y_adj: f64, gamma: f64) -> Result<f64> {
    if !(y_adj > 0.0) {
        return Err(Error::invalid(
            "adjoint must be positive for an interior consumption rule",
        ));
    }
    Ok(y_adj.powf(-1.0 / gamma))
}

/// Aggregate paths of the solved forward-backward system.
#[derive(Debug, Clone)]
pub struct MacroEquilibrium {
    pub times: Vec<f64>,
    pub k_bar: Vec<f64>,
    pub y_adj: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub c_rule: Vec<f64>,
    /// Constant borrowing bound used by the solve (from initial prices).
    pub phi: f64,
    /// Sup-norm defects of the two ODEs against an independent quadrature.
    pub residual_y: f64,
    pub residual_k: f64,
    pub iterations: usize,
    /// Terminal mismatch |ln Y(T)| per shooting iterate, followed by
    /// collocation defect norms when the Newton polish ran.
    pub convergence_history: Vec<f64>,
}

/// Compact-band LU solve with partial pivoting (`m1` sub-, `m2`
/// super-diagonals), the classic bandec/banbks scheme; used by the
/// collocation Newton step. Entries are (row, col, value) triplets.
fn banded_solve(
    n: usize,
    m1: usize,
    m2: usize,
    entries: &[(usize, usize, f64)],
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let mm = m1 + m2 + 1;
    // a[i][j] stores A[i][i - m1 + j].
    let mut a = vec![vec![0.0f64; mm]; n];
    for &(r, c, v) in entries {
        let j = c as isize - r as isize + m1 as isize;
        if j < 0 || j >= mm as isize {
            return None;
        }
        a[r][j as usize] += v;
    }
    let mut al = vec![vec![0.0f64; m1]; n];
    let mut index = vec![0usize; n];
    // Rearrange: shift the top rows left so column 0 is the working pivot.
    let mut l = m1;
    for i in 0..m1 {
        for j in (m1 - i)..mm {
            a[i][j - l] = a[i][j];
        }
        l -= 1;
        for j in (mm - l - 1)..mm {
            a[i][j] = 0.0;
        }
    }
    l = m1;
    for k in 0..n {
        let mut pivot = a[k][0];
        let mut pivot_row = k;
        if l < n {
            l += 1;
        }
        for j in (k + 1)..l.min(n) {
            if a[j][0].abs() > pivot.abs() {
                pivot = a[j][0];
                pivot_row = j;
            }
        }
        index[k] = pivot_row;
        if pivot == 0.0 {
            return None;
        }
        if pivot_row != k {
            a.swap(k, pivot_row);
        }
        for i in (k + 1)..l.min(n) {
            let factor = a[i][0] / a[k][0];
            al[k][i - k - 1] = factor;
            for j in 1..mm {
                a[i][j - 1] = a[i][j] - factor * a[k][j];
            }
            a[i][mm - 1] = 0.0;
        }
    }
    // Forward substitution.
    let mut b = rhs.to_vec();
    let mut l = m1;
    for k in 0..n {
        let i = index[k];
        if i != k {
            b.swap(k, i);
        }
        if l < n {
            l += 1;
        }
        for i in (k + 1)..l.min(n) {
            b[i] -= al[k][i - k - 1] * b[k];
        }
    }
    // Back substitution.
    let mut l = 1;
    for i in (0..n).rev() {
        let mut acc = b[i];
        for k in 1..l {
            acc -= a[i][k] * b[i + k];
        }
        b[i] = acc / a[i][0];
        if l < mm {
            l += 1;
        }
    }
    Some(b)
}

/// Hermite-Simpson collocation refinement of a (K, Z = ln Y) path by
/// damped Newton on the defect system
/// `y_{i+1} - y_i - h/6 (f_i + 4 f_mid + f_{i+1}) = 0` with
/// `y_mid = (y_i + y_{i+1})/2 + h/8 (f_i - f_{i+1})`, plus the boundary
/// rows `K_0 = k0` and `Z_n = 0`. Single shooting saturates f64 on long
/// horizons (terminal sensitivity grows like e^{lambda T}); collocation
/// has no such amplification.
fn collocation_polish(
    spec: &AiyagariSpec,
    phi: f64,
    h: f64,
    k_path: &mut [f64],
    z_path: &mut [f64],
) -> Result<Vec<f64>> {
    let n = k_path.len() - 1;
    let f = |k: f64, z: f64| -> (f64, f64) {
        let consumption = (-z / spec.gamma).exp();
        let a = spec.alpha_share;
        let drift = if spec.printed_aggregate {
            k.powf(a) - a * phi * k.powf(a - 1.0) - spec.delta * k + spec.delta * phi
                - consumption
        } else {
            let r = a * k.powf(a - 1.0) - spec.delta;
            let w = match spec.foc_convention {
                WageConvention::PaperExact => k.powf(a),
                WageConvention::Derived => (1.0 - a) * k.powf(a),
            };
            w + r * (k - phi) - consumption
        };
        (drift, -spec.adjoint_rate(k))
    };
    // Defect of segment i given endpoint states.
    let defect = |ki: f64, zi: f64, kj: f64, zj: f64| -> (f64, f64) {
        let fi = f(ki, zi);
        let fj = f(kj, zj);
        let km = 0.5 * (ki + kj) + h / 8.0 * (fi.0 - fj.0);
        let zm = 0.5 * (zi + zj) + h / 8.0 * (fi.1 - fj.1);
        let fm = f(km, zm);
        (
            kj - ki - h / 6.0 * (fi.0 + 4.0 * fm.0 + fj.0),
            zj - zi - h / 6.0 * (fi.1 + 4.0 * fm.1 + fj.1),
        )
    };
    let k0_target = k_path[0];
    let residual_norm = |k: &[f64], z: &[f64]| -> f64 {
        // Boundary defects count: a damped step must not leave the
        // terminal adjoint condition half-enforced.
        let mut worst = (k[0] - k0_target).abs().max(z[n].abs());
        for i in 0..n {
            let (dk, dz) = defect(k[i], z[i], k[i + 1], z[i + 1]);
            worst = worst.max(dk.abs()).max(dz.abs());
        }
        worst
    };

    let unknowns = 2 * (n + 1); // scalar order: K_0, Z_0, K_1, Z_1, ...
    let mut history = Vec::new();
    for _newton in 0..40 {
        let norm0 = residual_norm(k_path, z_path);
        history.push(norm0);
        if norm0 <= 1e-12 {
            return Ok(history);
        }
        // Assemble the banded Jacobian by per-segment finite differences.
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(16 * n + 2);
        let mut rhs = vec![0.0f64; unknowns];
        // Boundary rows first and last keep the band narrow.
        entries.push((0, 0, 1.0));
        rhs[0] = 0.0; // K_0 already equals k0 in the iterate
        entries.push((unknowns - 1, unknowns - 1, 1.0));
        rhs[unknowns - 1] = -z_path[n];
        for i in 0..n {
            let base = 1 + 2 * i; // defect rows for segment i
            let (d0, d1) = defect(k_path[i], z_path[i], k_path[i + 1], z_path[i + 1]);
            rhs[base] = -d0;
            rhs[base + 1] = -d1;
            let vars = [
                (2 * i, k_path[i], 0usize),
                (2 * i + 1, z_path[i], 1),
                (2 * i + 2, k_path[i + 1], 2),
                (2 * i + 3, z_path[i + 1], 3),
            ];
            for &(col, value, which) in &vars {
                let step = 1e-7 * (1.0 + value.abs());
                let mut args = [k_path[i], z_path[i], k_path[i + 1], z_path[i + 1]];
                args[which] = value + step;
                let (p0, p1) = defect(args[0], args[1], args[2], args[3]);
                args[which] = value - step;
                let (m0, m1) = defect(args[0], args[1], args[2], args[3]);
                entries.push((base, col, (p0 - m0) / (2.0 * step)));
                entries.push((base + 1, col, (p1 - m1) / (2.0 * step)));
            }
        }
        let delta = banded_solve(unknowns, 2, 2, &entries, &rhs).ok_or_else(|| {
            Error::NumericalFailure("collocation Jacobian is singular".into())
        })?;
        // Damped update: halve until the residual does not increase.
        let mut scale = 1.0f64;
        let mut accepted = false;
        for _ in 0..30 {
            let k_try: Vec<f64> = (0..=n)
                .map(|i| k_path[i] + scale * delta[2 * i])
                .collect();
            let z_try: Vec<f64> = (0..=n)
                .map(|i| z_path[i] + scale * delta[2 * i + 1])
                .collect();
            if k_try.iter().all(|&k| k > 0.0 && k.is_finite())
                && z_try.iter().all(|z| z.is_finite())
                && residual_norm(&k_try, &z_try) < norm0
            {
                k_path.copy_from_slice(&k_try);
                z_path.copy_from_slice(&z_try);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence {
                context: "collocation line search stalled".into(),
                residuals: history,
            });
        }
    }
    let final_norm = residual_norm(k_path, z_path);
    history.push(final_norm);
    if final_norm <= 1e-10 {
        Ok(history)
    } else {
        Err(Error::NonConvergence {
            context: "collocation Newton did not reach 1e-10".into(),
            residuals: history,
        })
    }
}

/// Cubic Hermite value on [t0, t0+h] given endpoint values and slopes.
fn hermite(s: f64, h: f64, v0: f64, d0: f64, v1: f64, d1: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * v0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * v1
        + (s3 - s2) * h * d1
}

const LOBATTO_NODES: [f64; 5] = [
    0.0,
    0.17267316464601146, // (1 - sqrt(3/7)) / 2
    0.5,
    0.8273268353539885,
    1.0,
];
const LOBATTO_WEIGHTS: [f64; 5] = [
    0.05,
    0.2722222222222222, // 49/180
    0.35555555555555557, // 32/90
    0.2722222222222222,
    0.05,
];

/// Solve the aggregate forward-backward system.
///
/// The pair `(K, Y)` is a two-point boundary value problem (capital pinned
/// at 0, adjoint pinned at T) whose adjoint responds exponentially to the
/// whole capital path, so path-sweeping iterations overshoot violently on
/// long horizons. The solver shoots on `Y(0)` instead: the terminal value
/// `Y(T)` is strictly increasing in the initial guess, so bisection on
/// `ln Y(0)` converges unconditionally; integration crashes (capital at
/// zero under too much consumption) count as undershoots. The accepted
/// capital path then gets one backward closed-form adjoint pass
/// (exponential of the Simpson-integrated rate per segment) so `Y(T) = 1`
/// holds exactly, and both residuals are measured on the grid against an
/// independent Gauss-Lobatto quadrature of the implemented right-hand
/// sides.
pub fn solve_macro_odes(spec: &AiyagariSpec, steps: usize, tol: f64) -> Result<MacroEquilibrium> {
    spec.validate()?;
    if steps < 100 {
        return Err(Error::invalid("need at least 100 grid steps"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let n = steps;
    let h = spec.t_end / n as f64;
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    let (r0, w0) = firm_prices(spec.k0, spec)?;
    let phi = borrowing_limit(spec, r0, w0);

    // Forward RK4 of the pair (K, ln Y) from (k0, z0); the log transform
    // keeps explosive adjoint variants representable. None when capital
    // crashes through the floor.
    let integrate = |z0: f64| -> Option<(Vec<f64>, Vec<f64>)> {
        let floor = 1e-9 * spec.k0;
        let mut ks = Vec::with_capacity(n + 1);
        let mut zs = Vec::with_capacity(n + 1);
        ks.push(spec.k0);
        zs.push(z0);
        let mut state = (spec.k0, z0);
        let f = |(k, z): (f64, f64)| -> (f64, f64) {
            let consumption = (-z / spec.gamma).exp();
            let a = spec.alpha_share;
            let drift = if spec.printed_aggregate {
                k.powf(a) - a * phi * k.powf(a - 1.0) - spec.delta * k + spec.delta * phi
                    - consumption
            } else {
                let r = a * k.powf(a - 1.0) - spec.delta;
                let w = match spec.foc_convention {
                    WageConvention::PaperExact => k.powf(a),
                    WageConvention::Derived => (1.0 - a) * k.powf(a),
                };
                w + r * (k - phi) - consumption
            };
            (drift, -spec.adjoint_rate(k))
        };
        for _ in 0..n {
            let (k, z) = state;
            let k1 = f((k, z));
            let k2 = f((k + 0.5 * h * k1.0, z + 0.5 * h * k1.1));
            let k3 = f((k + 0.5 * h * k2.0, z + 0.5 * h * k2.1));
            let k4 = f((k + h * k3.0, z + h * k3.1));
            let next = (
                k + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                z + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            );
            if !(next.0 > floor) || !next.0.is_finite() || !next.1.is_finite() {
                return None;
            }
            state = next;
            ks.push(state.0);
            zs.push(state.1);
        }
        Some((ks, zs))
    };
    // Terminal mismatch ln Y(T); crashes read as -inf (too much
    // consumption, initial adjoint too low).
    let shoot = |z0: f64| -> f64 {
        match integrate(z0) {
            Some((_, zs)) => zs[n],
            None => f64::NEG_INFINITY,
        }
    };

    let (mut lo, mut hi) = (-700.0f64, 700.0f64);
    if shoot(lo) > 0.0 || shoot(hi) < 0.0 {
        return Err(Error::Degenerate(
            "no admissible initial adjoint keeps aggregate capital positive \
             through the horizon"
                .into(),
        ));
    }
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..250 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let val = shoot(mid);
        history.push(if val.is_finite() { val.abs() } else { f64::MAX });
        if val < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    let z0_star = 0.5 * (lo + hi);
    let (mut k_bar, mut z_forward) =
        integrate(z0_star).ok_or_else(|| Error::NonConvergence {
            context: "shooting midpoint lost admissibility".into(),
            residuals: history.iter().rev().take(10).copied().collect(),
        })?;
    let terminal_gap = z_forward[n];
    if !terminal_gap.is_finite() {
        return Err(Error::NonConvergence {
            context: "shooting terminal value not finite".into(),
            residuals: history.iter().rev().take(10).copied().collect(),
        });
    }
    if terminal_gap.abs() > 1e-10 {
        // Long horizons saturate the shooting sensitivity; polish the
        // bisection path by collocation Newton, which pins both boundaries.
        let newton_history = collocation_polish(spec, phi, h, &mut k_bar, &mut z_forward)?;
        iterations += newton_history.len();
        history.extend(newton_history);
    }
    let y_forward: Vec<f64> = z_forward.iter().map(|&z| z.exp()).collect();

    // Backward closed-form adjoint pass along the accepted capital path,
    // pinning Y(T) = 1 exactly, then defect measurement. Hermite slopes for
    // the capital interpolant come from the forward pass.
    let k_slope: Vec<f64> = (0..=n)
        .map(|i| spec.capital_rhs(k_bar[i], y_forward[i], phi))
        .collect();
    let k_at = |seg: usize, s: f64| {
        hermite(s, h, k_bar[seg], k_slope[seg], k_bar[seg + 1], k_slope[seg + 1])
    };
    let mut y_final = vec![1.0; n + 1];
    for seg in (0..n).rev() {
        let rate0 = spec.adjoint_rate(k_bar[seg]);
        let rate_mid = spec.adjoint_rate(k_at(seg, 0.5));
        let rate1 = spec.adjoint_rate(k_bar[seg + 1]);
        let integral = h / 6.0 * (rate0 + 4.0 * rate_mid + rate1);
        y_final[seg] = y_final[seg + 1] * integral.exp();
    }
    let y_adj = y_final;
    let y_slope: Vec<f64> = (0..=n)
        .map(|i| -spec.adjoint_rate(k_bar[i]) * y_adj[i])
        .collect();
    let y_at = |seg: usize, s: f64| {
        hermite(s, h, y_adj[seg], y_slope[seg], y_adj[seg + 1], y_slope[seg + 1])
    };

    let mut residual_y = 0.0f64;
    let mut residual_k = 0.0f64;
    for seg in 0..n {
        let mut rate_integral = 0.0;
        let mut rhs_integral = 0.0;
        for (node, weight) in LOBATTO_NODES.iter().zip(&LOBATTO_WEIGHTS) {
            let k_s = k_at(seg, *node);
            let y_s = y_at(seg, *node);
            rate_integral += weight * spec.adjoint_rate(k_s);
            rhs_integral += weight * spec.capital_rhs(k_s, y_s, phi);
        }
        rate_integral *= h;
        rhs_integral *= h;
        residual_y = residual_y.max((y_adj[seg] - y_adj[seg + 1] * rate_integral.exp()).abs());
        residual_k = residual_k.max((k_bar[seg + 1] - k_bar[seg] - rhs_integral).abs());
    }

    let mut r = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n + 1);
    let mut c_rule = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let (ri, wi) = firm_prices(k_bar[i], spec)?;
        r.push(ri);
        w.push(wi);
        c_rule.push(optimal_consumption(y_adj[i], spec.gamma)?);
    }
    Ok(MacroEquilibrium {
        times,
        k_bar,
        y_adj,
        r,
        w,
        c_rule,
        phi,
        residual_y,
        residual_k,
        iterations,
        convergence_history: history,
    })
}

/// Household panel simulated against an aggregate equilibrium.
#[derive(Debug, Clone)]
pub struct HouseholdPanel {
    pub times: Vec<f64>,
    /// Shifted capital paths (floored at zero), one row per household.
    pub k_paths: Vec<Vec<f64>>,
    pub l_paths: Vec<Vec<f64>>,
    /// Number of (household, step) events where the floor bound.
    pub constraint_hits: usize,
}

impl HouseholdPanel {
    pub fn mean_capital(&self, node: usize) -> f64 {
        self.k_paths.iter().map(|p| p[node]).sum::<f64>() / self.k_paths.len() as f64
    }

    pub fn capital_std(&self, node: usize) -> f64 {
        let m = self.mean_capital(node);
        let n = self.k_paths.len() as f64;
        (self
            .k_paths
            .iter()
            .map(|p| (p[node] - m) * (p[node] - m))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    pub fn mean_labor(&self, node: usize) -> f64 {
        self.l_paths.iter().map(|p| p[node]).sum::<f64>() / self.l_paths.len() as f64
    }

    pub fn labor_std(&self, node: usize) -> f64 {
        let m = self.mean_labor(node);
        let n = self.l_paths.len() as f64;
        (self
            .l_paths
            .iter()
            .map(|p| (p[node] - m) * (p[node] - m))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

/// Euler-Maruyama panel on the equilibrium grid: labor follows the
/// specified mean-one process, capital follows the budget with prices and
/// the consumption rule from `eq`, floored at zero with hit counting.
/// Households start at the aggregate `k0` with unit labor.
pub fn simulate_panel(
    spec: &AiyagariSpec,
    eq: &MacroEquilibrium,
    households: usize,
    seed: u64,
) -> Result<HouseholdPanel> {
    spec.validate()?;
    if households < 10 {
        return Err(Error::invalid("need at least 10 households"));
    }
    let n = eq.times.len() - 1;
    let h = eq.times[1] - eq.times[0];
    let sqrt_h = h.sqrt();

    let rows: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..households)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::substream(seed, i as u64);
            let mut k = spec.k0;
            let mut l = 1.0;
            let mut hits = 0usize;
            let mut ks = Vec::with_capacity(n + 1);
            let mut ls = Vec::with_capacity(n + 1);
            ks.push(k);
            ls.push(l);
            for step in 0..n {
                let noise = rng::normal(&mut r);
                let l_next = match spec.labor.kind {
                    LaborKind::Ou => {
                        l + spec.labor.reversion * (1.0 - l) * h + spec.labor.vol * sqrt_h * noise
                    }
                    LaborKind::Gbm => {
                        l * (-0.5 * spec.labor.vol * spec.labor.vol * h
                            + spec.labor.vol * sqrt_h * noise)
                            .exp()
                    }
                }
                .clamp(spec.l_min, spec.l_max);
                // Trapezoidal budget drift along the labor path.
                let drift0 = eq.w[step] * l + eq.r[step] * (k - eq.phi) - eq.c_rule[step];
                let k_pred = k + drift0 * h;
                let drift1 = eq.w[step + 1] * l_next + eq.r[step + 1] * (k_pred - eq.phi)
                    - eq.c_rule[step + 1];
                let mut k_next = k + 0.5 * (drift0 + drift1) * h;
                if k_next < 0.0 {
                    k_next = 0.0;
                    hits += 1;
                }
                k = k_next;
                l = l_next;
                ks.push(k);
                ls.push(l);
            }
            (ks, ls, hits)
        })
        .collect();

    let mut k_paths = Vec::with_capacity(households);
    let mut l_paths = Vec::with_capacity(households);
    let mut constraint_hits = 0;
    for (ks, ls, hits) in rows {
        k_paths.push(ks);
        l_paths.push(ls);
        constraint_hits += hits;
    }
    Ok(HouseholdPanel {
        times: eq.times.clone(),
        k_paths,
        l_paths,
        constraint_hits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crra_branches_and_values() {
        assert!((crra_utility(std::f64::consts::E, 1.0).unwrap() - 1.0).abs() < 1e-15);
        for gamma in [0.5, 1.0, 2.0, 5.0] {
            assert!(crra_utility(1.0, gamma).unwrap().abs() < 1e-15);
        }
        assert!((crra_utility(2.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(crra_utility(0.0, 2.0).is_err());
        assert!(crra_utility(-1.0, 1.0).is_err());
    }

    #[test]
    fn firm_price_conventions() {
        let mut spec = AiyagariSpec::baseline();
        spec.foc_convention = WageConvention::PaperExact;
        let (r, w) = firm_prices(1.0, &spec).unwrap();
        assert!((r - (spec.alpha_share - spec.delta)).abs() < 1e-15);
        assert!((w - 1.0).abs() < 1e-15);
        spec.foc_convention = WageConvention::Derived;
        let (_, w) = firm_prices(1.0, &spec).unwrap();
        assert!((w - 0.64).abs() < 1e-15);
        assert!(firm_prices(0.0, &spec).is_err());
    }

    #[test]
    fn derived_wage_exhausts_output() {
        let spec = AiyagariSpec::baseline();
        for &k in &[0.5, 1.0, 3.7, 10.0] {
            let (r, w) = firm_prices(k, &spec).unwrap();
            let output = k.powf(spec.alpha_share);
            assert!(((r + spec.delta) * k + w - output).abs() < 1e-12 * output.max(1.0));
        }
    }

    #[test]
    fn borrowing_limit_cases() {
        let mut spec = AiyagariSpec::baseline();
        spec.b_limit = 1.0;
        spec.l_min = 0.5;
        assert_eq!(borrowing_limit(&spec, -0.01, 1.0), 1.0);
        assert_eq!(borrowing_limit(&spec, 0.25, 1.0), 1.0);
        spec.b_limit = 10.0;
        assert_eq!(borrowing_limit(&spec, 0.25, 1.0), 2.0);
    }

    #[test]
    fn consumption_rule_inverts_marginal_utility() {
        assert_eq!(optimal_consumption(1.0, 3.3).unwrap(), 1.0);
        assert!((optimal_consumption(2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let mut r = crate::rng::substream(5, 0);
        for _ in 0..100 {
            let y = 0.1 + 5.0 * rand::Rng::random::<f64>(&mut r);
            let gamma = 0.3 + 4.0 * rand::Rng::random::<f64>(&mut r);
            let c = optimal_consumption(y, gamma).unwrap();
            assert!((crra_marginal(c, gamma) - y).abs() < 1e-12);
        }
        assert!(optimal_consumption(0.0, 2.0).is_err());
        assert!(optimal_consumption(-1.0, 2.0).is_err());
    }

    #[test]
    fn reference_calibration_residuals_and_terminal() {
        let spec = AiyagariSpec::baseline();
        let eq = solve_macro_odes(&spec, 1000, 1e-10).unwrap();
        assert_eq!(*eq.y_adj.last().unwrap(), 1.0);
        assert!(eq.residual_y <= 1e-6, "adjoint residual {}", eq.residual_y);
        assert!(eq.residual_k <= 1e-6, "capital residual {}", eq.residual_k);
        assert!(eq.y_adj.iter().all(|&y| y > 0.0));
        assert!(eq.k_bar.iter().all(|&k| k > 0.0));
        assert!(eq.c_rule.iter().all(|&c| c > 0.0));
        assert_eq!(eq.phi, 0.0); // b = 0 pins the borrowing bound at zero
    }

    #[test]
    fn flag_variants_have_small_residuals_too() {
        for (paper_ode, printed, include_beta, wage) in [
            (true, false, false, WageConvention::PaperExact),
            (false, true, true, WageConvention::PaperExact),
            (true, true, false, WageConvention::Derived),
        ] {
            let mut spec = AiyagariSpec::baseline();
            spec.paper_exact_ode = paper_ode;
            spec.printed_aggregate = printed;
            spec.include_beta = include_beta;
            spec.foc_convention = wage;
            spec.t_end = 5.0;
            let eq = solve_macro_odes(&spec, 400, 1e-10).unwrap();
            assert!(
                eq.residual_y <= 1e-6 && eq.residual_k <= 1e-6,
                "variant residuals {} {}",
                eq.residual_y,
                eq.residual_k
            );
        }
    }

    #[test]
    fn zero_volatility_panel_is_deterministic() {
        let mut spec = AiyagariSpec::baseline();
        spec.labor.vol = 0.0;
        spec.t_end = 10.0;
        let eq = solve_macro_odes(&spec, 200, 1e-10).unwrap();
        let panel = simulate_panel(&spec, &eq, 50, 7).unwrap();
        let last = panel.times.len() - 1;
        for node in [0, last / 2, last] {
            assert!(panel.capital_std(node) <= 1e-12);
            assert!(panel.labor_std(node) <= 1e-12);
            assert!((panel.mean_labor(node) - 1.0).abs() <= 1e-12);
        }
        assert_eq!(panel.constraint_hits, 0);
    }
}
