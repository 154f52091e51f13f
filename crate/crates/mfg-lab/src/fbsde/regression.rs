//! Least-squares Monte Carlo backward SDE solver.
//!
//! Conditional expectations are projected on a Chebyshev polynomial basis
//! of the current state, rescaled to the sample range per time step. The
//! backward induction is
//!
//! ```text
//! Z_k = E[ Y_{k+1} dW_k | X_k ] / dt
//! Y_k = E[ Y_{k+1} - h(t_k, X_k, Y_{k+1}, Z_k) dt | X_k ]
//! ```
//!
//! with plain averages at k = 0 where the state is deterministic. Coupled
//! systems (forward coefficients reading Y) are handled by iterated forward
//! resimulation against the previous pass's regressed feedback.

use super::{BsdeSpec, Volatility};
use crate::error::{Error, Result};
use crate::rng;

/// Chebyshev least-squares fit on the sample range [lo, hi].
#[derive(Debug, Clone)]
struct PolyFit {
    lo: f64,
    hi: f64,
    coefs: Vec<f64>,
}

impl PolyFit {
    fn basis(u: f64, degree: usize) -> Vec<f64> {
        let mut t = Vec::with_capacity(degree + 1);
        t.push(1.0);
        if degree >= 1 {
            t.push(u);
        }
        for k in 2..=degree {
            let next = 2.0 * u * t[k - 1] - t[k - 2];
            t.push(next);
        }
        t
    }

    fn map(&self, x: f64) -> f64 {
        if self.hi == self.lo {
            0.0
        } else {
            ((2.0 * x - self.lo - self.hi) / (self.hi - self.lo)).clamp(-1.0, 1.0)
        }
    }

    fn fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = degree + 1;
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        let probe = PolyFit {
            lo,
            hi,
            coefs: vec![],
        };
        for (&x, &y) in xs.iter().zip(ys) {
            let b = Self::basis(probe.map(x), degree);
            for i in 0..m {
                rhs[i] += b[i] * y;
                for j in i..m {
                    gram[i][j] += b[i] * b[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                gram[i][j] = gram[j][i];
            }
        }
        let coefs = cholesky_solve(&mut gram, &rhs).ok_or_else(|| {
            Error::NumericalFailure(
                "regression matrix is rank deficient; lower the basis degree".into(),
            )
        })?;
        Ok(PolyFit { lo, hi, coefs })
    }

    fn eval(&self, x: f64) -> f64 {
        let b = Self::basis(self.map(x), self.coefs.len() - 1);
        b.iter().zip(&self.coefs).map(|(a, c)| a * c).sum()
    }
}

/// In-place Cholesky solve of a symmetric positive-definite system; None on
/// rank deficiency.
fn cholesky_solve(a: &mut [Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let scale: f64 = (0..n).map(|i| a[i][i]).sum::<f64>() / n as f64;
    for k in 0..n {
        for j in 0..k {
            a[k][k] -= a[k][j] * a[k][j];
        }
        if a[k][k] <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        a[k][k] = a[k][k].sqrt();
        for i in k + 1..n {
            for j in 0..k {
                a[i][k] -= a[i][j] * a[k][j];
            }
            a[i][k] /= a[k][k];
        }
    }
    let mut y = rhs.to_vec();
    for i in 0..n {
        for j in 0..i {
            y[i] -= a[i][j] * y[j];
        }
        y[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            y[i] -= a[j][i] * y[j];
        }
        y[i] /= a[i][i];
    }
    Some(y)
}

/// Output of the regression solver.
#[derive(Debug, Clone)]
pub struct RegressionSolution {
    pub y0: f64,
    pub times: Vec<f64>,
    pub x_paths: Vec<Vec<f64>>,
    pub y_paths: Vec<Vec<f64>>,
    /// One z value per step (length `steps`), per path.
    pub z_paths: Vec<Vec<f64>>,
}

struct ForwardPass {
    xs: Vec<Vec<f64>>,     // [step][path]
    dws: Vec<Vec<f64>>,    // [step][path]
}

fn simulate_forward(
    spec: &BsdeSpec,
    steps: usize,
    paths: usize,
    seed: u64,
    feedback: Option<&[PolyFit]>,
) -> ForwardPass {
    let dt = spec.t_end / steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut xs = vec![vec![0.0; paths]; steps + 1];
    let mut dws = vec![vec![0.0; paths]; steps];
    for p in 0..paths {
        let mut r = rng::substream(seed, p as u64);
        let mut x = spec.x0;
        xs[0][p] = x;
        for k in 0..steps {
            let t = k as f64 * dt;
            let y = match feedback {
                Some(fits) => fits[k].eval(x),
                None => (spec.terminal)(x),
            };
            let dw = sqrt_dt * rng::normal(&mut r);
            let b = (spec.drift)(t, x, y);
            let s = match &spec.volatility {
                Volatility::ZIndependent(f) => f(t, x, y),
                Volatility::ZDependent { f, .. } => f(t, x, y, 0.0),
            };
            x += b * dt + s * dw;
            xs[k + 1][p] = x;
            dws[k][p] = dw;
        }
    }
    ForwardPass { xs, dws }
}

/// Backward regression pass; returns (y0, per-step y fits, y paths, z paths).
fn backward_pass(
    spec: &BsdeSpec,
    fw: &ForwardPass,
    steps: usize,
    degree: usize,
) -> Result<(f64, Vec<PolyFit>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let paths = fw.xs[0].len();
    let dt = spec.t_end / steps as f64;
    let mut y: Vec<f64> = fw.xs[steps].iter().map(|&x| (spec.terminal)(x)).collect();
    let mut y_rows = vec![vec![0.0; paths]; steps + 1];
    let mut z_rows = vec![vec![0.0; paths]; steps];
    y_rows[steps] = y.clone();
    // Feedback fits indexed by step; step `steps` never used, fill later.
    let mut fits: Vec<Option<PolyFit>> = vec![None; steps];

    for k in (0..steps).rev() {
        let t = k as f64 * dt;
        let xk = &fw.xs[k];
        // The z projection E[Y dW | X]/dt is computed in its martingale-
        // difference form E[(Y - E[Y|X]) dW | X]/dt: the same conditional
        // expectation, with the spurious sample correlation of E[Y|X] and
        // dW removed (exactly zero for constant terminal data).
        let z: Vec<f64> = if k == 0 {
            let mean_y = y.iter().sum::<f64>() / paths as f64;
            let z0 = y
                .iter()
                .zip(&fw.dws[0])
                .map(|(&yv, &dw)| (yv - mean_y) * dw)
                .sum::<f64>()
                / (paths as f64 * dt);
            vec![z0; paths]
        } else {
            let cond_fit = PolyFit::fit(xk, &y, degree)?;
            let target: Vec<f64> = (0..paths)
                .map(|p| (y[p] - cond_fit.eval(xk[p])) * fw.dws[k][p] / dt)
                .collect();
            let fit = PolyFit::fit(xk, &target, degree)?;
            xk.iter().map(|&x| fit.eval(x)).collect()
        };
        let integrand: Vec<f64> = (0..paths)
            .map(|p| y[p] - (spec.driver)(t, xk[p], y[p], z[p]) * dt)
            .collect();
        let y_new: Vec<f64> = if k == 0 {
            let m = integrand.iter().sum::<f64>() / paths as f64;
            vec![m; paths]
        } else {
            let fit = PolyFit::fit(xk, &integrand, degree)?;
            let vals: Vec<f64> = xk.iter().map(|&x| fit.eval(x)).collect();
            fits[k] = Some(fit);
            vals
        };
        y = y_new;
        y_rows[k] = y.clone();
        z_rows[k] = z;
    }
    let y0 = y[0];
    // Step-0 feedback: the deterministic value.
    let fit0 = PolyFit {
        lo: spec.x0 - 1.0,
        hi: spec.x0 + 1.0,
        coefs: {
            let mut c = vec![0.0; degree + 1];
            c[0] = y0;
            c
        },
    };
    let mut feedback = Vec::with_capacity(steps);
    for (k, f) in fits.into_iter().enumerate() {
        feedback.push(f.unwrap_or_else(|| {
            if k == 0 {
                fit0.clone()
            } else {
                fit0.clone()
            }
        }));
    }
    Ok((y0, feedback, y_rows, z_rows))
}

/// Regression BSDE solve for a decoupled system (one forward pass).
pub fn solve_bsde_regression(
    spec: &BsdeSpec,
    steps: usize,
    paths: usize,
    basis_degree: usize,
    seed: u64,
) -> Result<RegressionSolution> {
    solve_bsde_regression_with(spec, steps, paths, basis_degree, seed, 1)
}

/// Same solver with `resim_iterations` forward/backward rounds: coupled
/// systems feed the previous round's regressed Y back into the forward
/// coefficients.
pub fn solve_bsde_regression_with(
    spec: &BsdeSpec,
    steps: usize,
    paths: usize,
    basis_degree: usize,
    seed: u64,
    resim_iterations: usize,
) -> Result<RegressionSolution> {
    if basis_degree == 0 {
        return Err(Error::invalid("basis degree must be at least 1"));
    }
    if steps == 0 || paths < 10 {
        return Err(Error::invalid("need steps >= 1 and at least 10 paths"));
    }
    let dt = spec.t_end / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();

    let mut feedback: Option<Vec<PolyFit>> = None;
    let mut last = None;
    for _ in 0..resim_iterations.max(1) {
        let fw = simulate_forward(spec, steps, paths, seed, feedback.as_deref());
        let (y0, fits, y_rows, z_rows) = backward_pass(spec, &fw, steps, basis_degree)?;
        feedback = Some(fits);
        last = Some((y0, fw, y_rows, z_rows));
    }
    let (y0, fw, y_rows, z_rows) = last.expect("at least one round");

    // Transpose to path-major storage.
    let paths_n = fw.xs[0].len();
    let to_paths = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..paths_n)
            .map(|p| rows.iter().map(|row| row[p]).collect())
            .collect()
    };
    Ok(RegressionSolution {
        y0,
        times,
        x_paths: to_paths(&fw.xs),
        y_paths: to_paths(&y_rows),
        z_paths: to_paths(&z_rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbsde::Volatility;

    fn brownian_spec() -> BsdeSpec {
        BsdeSpec::new(
            |_, _, _| 0.0,
            Volatility::constant(1.0),
            |_, _, _, _| 0.0,
            |x| x,
            0.0,
            1.0,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn martingale_representation_of_terminal_state() {
        // h = 0, Y_T = W_T: Y_t = W_t pathwise, Z ~ 1.
        let sol = solve_bsde_regression(&brownian_spec(), 25, 8000, 3, 42).unwrap();
        assert!(sol.y0.abs() < 0.05, "y0 = {}", sol.y0);
        let mut max_err = 0.0f64;
        for (xp, yp) in sol.x_paths.iter().zip(&sol.y_paths).take(500) {
            for k in 5..=25 {
                max_err = max_err.max((xp[k] - yp[k]).abs());
            }
        }
        assert!(max_err < 0.2, "pathwise |Y - W| = {max_err}");
        let z_mean: f64 = sol
            .z_paths
            .iter()
            .map(|zp| zp.iter().sum::<f64>() / zp.len() as f64)
            .sum::<f64>()
            / sol.z_paths.len() as f64;
        assert!((z_mean - 1.0).abs() < 0.05, "mean Z = {z_mean}");
    }

    #[test]
    fn constant_terminal_exactly_reproduced() {
        let spec = BsdeSpec::new(
            |_, _, _| 0.0,
            Volatility::constant(1.0),
            |_, _, _, _| 0.0,
            |_| 2.75,
            0.0,
            1.0,
            0.0,
        )
        .unwrap();
        let sol = solve_bsde_regression(&spec, 10, 500, 2, 7).unwrap();
        assert!((sol.y0 - 2.75).abs() < 1e-12);
        for yp in sol.y_paths.iter().take(50) {
            for &v in yp {
                assert!((v - 2.75).abs() < 1e-10);
            }
        }
        for zp in sol.z_paths.iter().take(50) {
            for &v in zp {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_driver_discounts_terminal_state() {
        // dY = rY dt + Z dW, Y_T = X_T with X = W: the discounted
        // conditional expectation Y_0 = e^{-rT} x0.
        let r = 0.1;
        let mk = |x0: f64| {
            BsdeSpec::new(
                |_, _, _| 0.0,
                Volatility::constant(1.0),
                move |_, _, y, _| r * y,
                |x| x,
                x0,
                1.0,
                r,
            )
            .unwrap()
        };
        let sol0 = solve_bsde_regression(&mk(0.0), 25, 4000, 3, 11).unwrap();
        assert!(sol0.y0.abs() < 0.01, "y0 = {}", sol0.y0);
        let sol1 = solve_bsde_regression(&mk(1.0), 25, 4000, 3, 11).unwrap();
        let want = (-r).exp();
        assert!(
            (sol1.y0 - want).abs() < 0.01 * want,
            "y0 = {} vs {}",
            sol1.y0,
            want
        );
    }

    #[test]
    fn rank_deficiency_advises_lower_degree() {
        // Zero volatility: all states identical, the Vandermonde collapses.
        let spec = BsdeSpec::new(
            |_, _, _| 0.0,
            Volatility::constant(0.0),
            |_, _, _, _| 0.0,
            |x| x,
            1.0,
            1.0,
            0.0,
        )
        .unwrap();
        match solve_bsde_regression(&spec, 5, 100, 3, 0) {
            Err(Error::NumericalFailure(msg)) => assert!(msg.contains("lower the basis degree")),
            other => panic!("expected rank failure, got {other:?}"),
        }
    }
}
