//! A numerical laboratory for mean-field games built on probabilistic methods.
//!
//! The crate collects, in one place, the toolchain needed to go from a toy
//! static game all the way to a continuous-time heterogeneous-agent economy:
//!
//! * [`measures`] — one-dimensional empirical measures, exact Wasserstein-1
//!   distances and Glivenko-Cantelli diagnostics. Every mean-field coupling
//!   in the crate flows through these types.
//! * [`games`] — finite bimatrix games (pure and 2×2 mixed Nash) and the
//!   Cournot duopoly with its closed-form equilibrium.
//! * [`meeting`] — the "when does the meeting start?" game: noise law,
//!   quantile start rule, best-response times and the contraction fixed
//!   point, plus finite-population Monte Carlo validation.
//! * [`mckean_vlasov`] — interacting particle systems, the nonlinear
//!   (McKean-Vlasov) process solved by Picard iteration on the measure flow,
//!   and propagation-of-chaos gap measurements.
//! * [`fbsde`] — backward SDE solvers (least-squares Monte Carlo regression)
//!   and the four-step decoupling scheme (quasilinear parabolic PDE plus a
//!   forward SDE), with the Black-Scholes and coupled linear instances built
//!   in.
//! * [`mfg`] — mean-field game equilibria for the representative-agent
//!   problem by two routes: the stochastic-maximum-principle FBSDE route and
//!   the coupled HJB/Fokker-Planck route, plus ε-Nash quality estimates for
//!   the induced finite game.
//! * [`aiyagari`] — the continuous-time Aiyagari model: CRRA households,
//!   Cobb-Douglas firm, the forward-backward aggregate ODE system and panel
//!   simulation consistency checks.
//! * [`config`] / [`runner`] — the JSON scenario layer behind the `mfg-lab`
//!   command-line binary.
//!
//! A narrative guide with runnable examples lives in `book/`; its code
//! snippets are compiled and executed as part of `cargo test` (see
//! [`guide`]).

pub mod aiyagari;
pub mod config;
pub mod error;
pub mod fbsde;
pub mod games;
pub mod guide;
pub mod mckean_vlasov;
pub mod measures;
pub mod meeting;
pub mod mfg;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
pub use measures::{DistributionSpec, EmpiricalMeasure, MeasureFlow};
