//! The Black-Scholes FBSDE instance and its closed-form put price.
//!
//! The wealth equation prices a European payoff through the decoupled
//! system `dS = mu S dt + sigma S dW`, `dY = (rY + (mu - r) Z / sigma) dt
//! + Z dW`, `Y_T = (K - S_T)^+`. The PDE leg is posed in log-price
//! coordinates, where the volatility is constant and the truncation window
//! `ln s0 +/- 8 sigma sqrt(T)` keeps the boundary influence at the spot
//! below 1e-6.

use super::pde::{Grid1d, PdeGrids};
use super::{BsdeSpec, Volatility};
use crate::error::{Error, Result};
use crate::rng::norm_cdf;

/// Closed-form European put.
pub fn black_scholes_put(
    s: f64,
    k: f64,
    r: f64,
    sigma: f64,
    t_now: f64,
    t_mat: f64,
) -> Result<f64> {
    if !(s > 0.0) || !(k >= 0.0) || !(sigma > 0.0) || !(t_mat > t_now) {
        return Err(Error::invalid(
            "put price needs s > 0, k >= 0, sigma > 0, t_mat > t_now",
        ));
    }
    if k == 0.0 {
        return Ok(0.0);
    }
    let tau = t_mat - t_now;
    let vol = sigma * tau.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / vol;
    let d2 = d1 - vol;
    Ok(k * (-r * tau).exp() * norm_cdf(-d2) - s * norm_cdf(-d1))
}

/// Parameters of the put-pricing instance.
#[derive(Debug, Clone, Copy)]
pub struct BlackScholesInstance {
    pub s0: f64,
    pub strike: f64,
    pub rate: f64,
    pub mu: f64,
    pub sigma: f64,
    pub t_end: f64,
}

impl BlackScholesInstance {
    pub fn new(s0: f64, strike: f64, rate: f64, mu: f64, sigma: f64, t_end: f64) -> Result<Self> {
        if !(s0 > 0.0 && strike > 0.0 && sigma > 0.0 && t_end > 0.0) {
            return Err(Error::invalid(
                "instance needs positive spot, strike, volatility and horizon",
            ));
        }
        Ok(BlackScholesInstance {
            s0,
            strike,
            rate,
            mu,
            sigma,
            t_end,
        })
    }

    /// The FBSDE in log-price coordinates x = ln s: constant volatility,
    /// drift mu - sigma^2/2, unchanged driver, terminal (K - e^x)^+.
    pub fn log_space_spec(&self) -> BsdeSpec {
        let sigma = self.sigma;
        let mu = self.mu;
        let r = self.rate;
        let k = self.strike;
        BsdeSpec::new(
            move |_, _, _| mu - 0.5 * sigma * sigma,
            Volatility::constant(sigma),
            move |_, _, y, z| r * y + (mu - r) * z / sigma,
            move |x: f64| (k - x.exp()).max(0.0),
            self.s0.ln(),
            self.t_end,
            r.abs() + ((self.mu - r) / sigma).abs(),
        )
        .expect("valid instance")
    }

    /// Log-space grids wide enough that truncation is invisible at the spot.
    pub fn grids(&self, x_steps: usize, t_steps: usize) -> PdeGrids {
        let half = 8.0 * self.sigma * self.t_end.sqrt();
        let x0 = self.s0.ln();
        PdeGrids::new(
            Grid1d::new(x0 - half, x0 + half, x_steps).expect("half width positive"),
            t_steps,
        )
    }

    pub fn price(&self) -> f64 {
        black_scholes_put(self.s0, self.strike, self.rate, self.sigma, 0.0, self.t_end)
            .expect("validated instance")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_strike_put_is_worthless() {
        assert_eq!(black_scholes_put(1.0, 0.0, 0.05, 0.2, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn vanishing_volatility_recovers_intrinsic_value() {
        // r = 0, sigma -> 0: price -> (k - s)^+.
        let itm = black_scholes_put(0.7, 1.0, 0.0, 1e-8, 0.0, 1.0).unwrap();
        assert!((itm - 0.3).abs() <= 1e-6);
        let otm = black_scholes_put(1.4, 1.0, 0.0, 1e-8, 0.0, 1.0).unwrap();
        assert!(otm.abs() <= 1e-6);
    }

    #[test]
    fn domain_violations_rejected() {
        assert!(black_scholes_put(-1.0, 1.0, 0.0, 0.2, 0.0, 1.0).is_err());
        assert!(black_scholes_put(1.0, 1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(black_scholes_put(1.0, 1.0, 0.0, 0.2, 1.0, 1.0).is_err());
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = if n % 2 == 0 { n + 1 } else { n };
        let h = (b - a) / (n - 1) as f64;
        let mut total = f(a) + f(b);
        for k in 1..n - 1 {
            total += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
        }
        total * h / 3.0
    }

    #[test]
    fn price_matches_lognormal_quadrature() {
        let (s, k, r, sigma, tau) = (1.0, 1.0, 0.05, 0.2, 1.0);
        let price = black_scholes_put(s, k, r, sigma, 0.0, tau).unwrap();
        // e^{-r tau} E (K - S_T)^+ under the risk-neutral lognormal law.
        let integrand = |u: f64| {
            let st = s * ((r - 0.5 * sigma * sigma) * tau + sigma * tau.sqrt() * u).exp();
            (k - st).max(0.0) * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let oracle = (-r * tau).exp() * simpson(integrand, -12.0, 12.0, 20_001);
        assert!(
            (price - oracle).abs() < 1e-6,
            "closed form {price} vs quadrature {oracle}"
        );
    }

    #[test]
    fn put_call_parity_against_quadrature() {
        let (s, k, r, sigma, tau) = (1.1, 0.95, 0.03, 0.25, 2.0);
        let put = black_scholes_put(s, k, r, sigma, 0.0, tau).unwrap();
        let call = put + s - k * (-r * tau).exp();
        let integrand = |u: f64| {
            let st = s * ((r - 0.5 * sigma * sigma) * tau + sigma * tau.sqrt() * u).exp();
            (st - k).max(0.0) * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let oracle = (-r * tau).exp() * simpson(integrand, -12.0, 12.0, 20_001);
        assert!(
            (call - oracle).abs() < 1e-8,
            "parity call {call} vs quadrature {oracle}"
        );
    }
}
