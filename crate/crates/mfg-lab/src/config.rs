//! JSON scenario configuration.
//!
//! A scenario document carries a seed, an optional output directory and
//! exactly one scenario block. Validation is two-stage: parse errors report
//! line and column; semantic validation walks every field and returns *all*
//! violations with their field paths, so a bad config never reaches a
//! module precondition panic.

use crate::aiyagari::{AiyagariSpec, LaborSpec, WageConvention};
use crate::error::{Error, Result};
use crate::games::BimatrixGame;
use crate::measures::DistributionSpec;
use crate::meeting::MeetingSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub games: Option<GamesConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub meeting: Option<MeetingConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mkv: Option<MkvConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fbsde: Option<FbsdeConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mfg: Option<MfgConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aiyagari: Option<AiyagariConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GamesConfig {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bimatrix: Option<BimatrixConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cournot: Option<CournotConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BimatrixConfig {
    /// One of "prisoners_dilemma", "matching_pennies"; or give matrices.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub payoff1: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub payoff2: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CournotConfig {
    pub a: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeetingConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t0: f64,
    pub quantile: f64,
    pub t_end: f64,
    pub nu: DistributionSpec,
    pub tol: f64,
    pub n_list: Vec<usize>,
    /// Seeds per population size for the finite-game table.
    pub seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub self_consistent: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MkvConfig {
    pub kernel: KernelConfig,
    pub sigma: f64,
    pub mu0: DistributionSpec,
    pub t_end: f64,
    pub dt: f64,
    /// Interacting-system particle count.
    pub n: usize,
    /// Representation particles of the nonlinear process.
    pub m: usize,
    pub tol: f64,
    pub n_list: Vec<usize>,
    pub chaos_seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KernelConfig {
    /// One of "zero", "ou", "linear_pull", "polynomial".
    pub name: String,
    /// Monomials (own_pow, other_pow, coef) for the polynomial kind.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub terms: Option<Vec<(u32, u32, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FbsdeConfig {
    pub instance: FbsdeInstance,
    pub x_steps: usize,
    pub t_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub x_halfwidth: Option<f64>,
    pub paths: usize,
    /// "four_step", "regression" or "both".
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub basis_degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regression_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub resim_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FbsdeInstance {
    BlackScholes {
        s0: f64,
        strike: f64,
        rate: f64,
        mu: f64,
        sigma: f64,
        t_end: f64,
    },
    LinearCoupled {
        x0: f64,
        t_end: f64,
    },
    Custom {
        /// Monomials (x_pow, y_pow, coef).
        drift: Vec<(u32, u32, f64)>,
        vol: Vec<(u32, u32, f64)>,
        /// Monomials (x_pow, y_pow, z_pow, coef).
        driver: Vec<(u32, u32, u32, f64)>,
        terminal: TerminalConfig,
        x0: f64,
        t_end: f64,
        lipschitz: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalConfig {
    Linear { slope: f64, intercept: f64 },
    Tanh,
    Put { strike: f64 },
    Call { strike: f64 },
}

impl TerminalConfig {
    pub fn to_fn(&self) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
        let cfg = self.clone();
        move |x: f64| match cfg {
            TerminalConfig::Linear { slope, intercept } => slope * x + intercept,
            TerminalConfig::Tanh => x.tanh(),
            TerminalConfig::Put { strike } => (strike - x).max(0.0),
            TerminalConfig::Call { strike } => (x - strike).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MfgConfig {
    pub preset: MfgPreset,
    /// "smp", "hjb_fp" or "both".
    pub method: String,
    pub x_lo: f64,
    pub x_hi: f64,
    pub x_steps: usize,
    pub t_steps: usize,
    pub atoms: usize,
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    #[serde(default)]
    pub fictitious_play: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<EpsilonConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MfgPreset {
    LqMeanField {
        coupling: f64,
        sigma: f64,
        t_end: f64,
        mu0: DistributionSpec,
        action_bound: f64,
    },
    CrowdAversion {
        weight: f64,
        bandwidth: f64,
        sigma: f64,
        t_end: f64,
        mu0: DistributionSpec,
        action_bound: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpsilonConfig {
    pub n_list: Vec<usize>,
    pub paths: usize,
    pub seeds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AiyagariConfig {
    pub gamma: f64,
    pub alpha_share: f64,
    pub delta: f64,
    pub beta: f64,
    pub b_limit: f64,
    pub labor: LaborSpec,
    pub l_min: f64,
    pub l_max: f64,
    pub t_end: f64,
    pub k0: f64,
    pub foc_convention: WageConvention,
    #[serde(default)]
    pub paper_exact_ode: bool,
    #[serde(default)]
    pub printed_aggregate: bool,
    #[serde(default = "default_true")]
    pub include_beta: bool,
    pub steps: usize,
    pub tol: f64,
    pub households: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

fn default_true() -> bool {
    true
}

impl AiyagariConfig {
    pub fn to_spec(&self) -> AiyagariSpec {
        AiyagariSpec {
            gamma: self.gamma,
            alpha_share: self.alpha_share,
            delta: self.delta,
            beta: self.beta,
            b_limit: self.b_limit,
            labor: self.labor,
            l_min: self.l_min,
            l_max: self.l_max,
            t_end: self.t_end,
            k0: self.k0,
            foc_convention: self.foc_convention,
            paper_exact_ode: self.paper_exact_ode,
            printed_aggregate: self.printed_aggregate,
            include_beta: self.include_beta,
        }
    }
}

/// Parse and fully validate a configuration document.
pub fn validate_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
        Error::Config(vec![format!(
            "parse error at line {}, column {}: {e}",
            e.line(),
            e.column()
        )])
    })?;
    let violations = cfg.violations();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(violations))
    }
}

impl ScenarioConfig {
    pub fn scenario_kind(&self) -> Option<&'static str> {
        let mut kind = None;
        let mut count = 0;
        if self.games.is_some() {
            kind = Some("games");
            count += 1;
        }
        if self.meeting.is_some() {
            kind = Some("meeting");
            count += 1;
        }
        if self.mkv.is_some() {
            kind = Some("mkv");
            count += 1;
        }
        if self.fbsde.is_some() {
            kind = Some("fbsde");
            count += 1;
        }
        if self.mfg.is_some() {
            kind = Some("mfg");
            count += 1;
        }
        if self.aiyagari.is_some() {
            kind = Some("aiyagari");
            count += 1;
        }
        if count == 1 {
            kind
        } else {
            None
        }
    }

    /// All semantic violations, with field paths.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let blocks = [
            self.games.is_some(),
            self.meeting.is_some(),
            self.mkv.is_some(),
            self.fbsde.is_some(),
            self.mfg.is_some(),
            self.aiyagari.is_some(),
        ];
        let count = blocks.iter().filter(|&&b| b).count();
        if count == 0 {
            out.push("scenario: exactly one kind block required, found none".into());
        } else if count > 1 {
            out.push(format!(
                "scenario: exactly one kind block required, found {count}"
            ));
        }
        if let Some(games) = &self.games {
            games.check(&mut out);
        }
        if let Some(meeting) = &self.meeting {
            meeting.check(&mut out);
        }
        if let Some(mkv) = &self.mkv {
            mkv.check(&mut out);
        }
        if let Some(fbsde) = &self.fbsde {
            fbsde.check(&mut out);
        }
        if let Some(mfg) = &self.mfg {
            mfg.check(&mut out);
        }
        if let Some(aiyagari) = &self.aiyagari {
            aiyagari.check(&mut out);
        }
        out
    }
}

fn check_positive(out: &mut Vec<String>, path: &str, v: f64) {
    if !(v > 0.0) || !v.is_finite() {
        out.push(format!("{path}: must be positive, got {v}"));
    }
}

fn check_distribution(out: &mut Vec<String>, path: &str, d: &DistributionSpec) {
    if let Err(e) = d.validate() {
        out.push(format!("{path}: {e}"));
    }
}

impl GamesConfig {
    fn check(&self, out: &mut Vec<String>) {
        if self.bimatrix.is_none() && self.cournot.is_none() {
            out.push("games: need at least one of `bimatrix`, `cournot`".into());
        }
        if let Some(bim) = &self.bimatrix {
            match (&bim.preset, &bim.payoff1, &bim.payoff2) {
                (Some(name), None, None) => {
                    if !matches!(name.as_str(), "prisoners_dilemma" | "matching_pennies") {
                        out.push(format!("games.bimatrix.preset: unknown preset `{name}`"));
                    }
                }
                (None, Some(p1), Some(p2)) => {
                    if BimatrixGame::new(p1.clone(), p2.clone()).is_err() {
                        out.push(
                            "games.bimatrix: payoff matrices must be nonempty, finite and \
                             share one shape"
                                .into(),
                        );
                    }
                }
                _ => out.push(
                    "games.bimatrix: give either `preset` or both payoff matrices".into(),
                ),
            }
        }
        if let Some(c) = &self.cournot {
            if !(c.a > c.c) || !(c.c >= 0.0) {
                out.push(format!(
                    "games.cournot: need a > c >= 0, got a = {}, c = {}",
                    c.a, c.c
                ));
            }
        }
    }
}

impl MeetingConfig {
    fn check(&self, out: &mut Vec<String>) {
        check_positive(out, "meeting.a", self.a);
        check_positive(out, "meeting.b", self.b);
        check_positive(out, "meeting.c", self.c);
        check_positive(out, "meeting.tol", self.tol);
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            out.push(format!(
                "meeting.quantile: must lie in (0,1), got {}",
                self.quantile
            ));
        }
        if !(0.0..=self.t_end).contains(&self.t0) {
            out.push(format!(
                "meeting.t0: must lie in [0, t_end], got {} with t_end {}",
                self.t0, self.t_end
            ));
        }
        check_distribution(out, "meeting.nu", &self.nu);
        if !(self.nu.support_min() > 0.0) {
            out.push("meeting.nu: support must be strictly positive".into());
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n == 0) {
            out.push("meeting.n_list: need nonempty positive population sizes".into());
        }
        if self.seeds == 0 {
            out.push("meeting.seeds: need at least one seed".into());
        }
    }

    pub fn to_spec(&self) -> Result<MeetingSpec> {
        MeetingSpec::with_rule(
            self.a,
            self.b,
            self.c,
            self.t0,
            self.nu.clone(),
            self.quantile,
            self.t_end,
        )
    }
}

impl MkvConfig {
    fn check(&self, out: &mut Vec<String>) {
        if !(self.sigma >= 0.0) {
            out.push(format!("mkv.sigma: must be nonnegative, got {}", self.sigma));
        }
        check_positive(out, "mkv.t_end", self.t_end);
        check_positive(out, "mkv.dt", self.dt);
        check_positive(out, "mkv.tol", self.tol);
        if self.dt > 0.0 && self.t_end > 0.0 {
            let steps = (self.t_end / self.dt).round();
            if (steps * self.dt - self.t_end).abs() > 1e-12 * self.t_end.max(1.0) {
                out.push(format!(
                    "mkv.dt: {} does not divide the horizon {}",
                    self.dt, self.t_end
                ));
            }
        }
        check_distribution(out, "mkv.mu0", &self.mu0);
        if self.n == 0 {
            out.push("mkv.n: need at least one particle".into());
        }
        if self.m < 10 {
            out.push("mkv.m: need at least 10 representation particles".into());
        }
        match self.kernel.name.as_str() {
            "zero" | "ou" | "linear_pull" => {}
            "polynomial" => {
                if self.kernel.terms.is_none() {
                    out.push("mkv.kernel.terms: polynomial kernel needs monomials".into());
                }
                if self.kernel.lipschitz.is_none() {
                    out.push(
                        "mkv.kernel.lipschitz: polynomial kernel needs a declared bound".into(),
                    );
                }
            }
            other => out.push(format!("mkv.kernel.name: unknown kernel `{other}`")),
        }
        if self.n_list.iter().any(|&n| n == 0) {
            out.push("mkv.n_list: population sizes must be positive".into());
        }
    }
}

impl FbsdeConfig {
    fn check(&self, out: &mut Vec<String>) {
        if self.x_steps < 2 || self.t_steps < 1 {
            out.push("fbsde: need x_steps >= 2 and t_steps >= 1".into());
        }
        if !matches!(self.method.as_str(), "four_step" | "regression" | "both") {
            out.push(format!(
                "fbsde.method: one of four_step|regression|both, got `{}`",
                self.method
            ));
        }
        if let Some(d) = self.basis_degree {
            if d == 0 {
                out.push("fbsde.basis_degree: must be at least 1".into());
            }
        }
        match &self.instance {
            FbsdeInstance::BlackScholes {
                s0,
                strike,
                sigma,
                t_end,
                ..
            } => {
                if !(*s0 > 0.0 && *strike > 0.0 && *sigma > 0.0 && *t_end > 0.0) {
                    out.push(
                        "fbsde.instance: black_scholes needs positive s0, strike, sigma, t_end"
                            .into(),
                    );
                }
            }
            FbsdeInstance::LinearCoupled { t_end, .. } => {
                check_positive(out, "fbsde.instance.t_end", *t_end);
            }
            FbsdeInstance::Custom { t_end, lipschitz, .. } => {
                check_positive(out, "fbsde.instance.t_end", *t_end);
                if !(*lipschitz >= 0.0) {
                    out.push("fbsde.instance.lipschitz: must be nonnegative".into());
                }
            }
        }
    }
}

impl MfgConfig {
    fn check(&self, out: &mut Vec<String>) {
        if !matches!(self.method.as_str(), "smp" | "hjb_fp" | "both") {
            out.push(format!(
                "mfg.method: one of smp|hjb_fp|both, got `{}`",
                self.method
            ));
        }
        if !(self.x_hi > self.x_lo) {
            out.push("mfg: need x_hi > x_lo".into());
        }
        if self.x_steps < 10 || self.t_steps < 2 {
            out.push("mfg: need x_steps >= 10 and t_steps >= 2".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            out.push(format!(
                "mfg.damping: must lie in (0,1], got {}",
                self.damping
            ));
        }
        check_positive(out, "mfg.tol", self.tol);
        if self.atoms < 10 {
            out.push("mfg.atoms: need at least 10 representation atoms".into());
        }
        match &self.preset {
            MfgPreset::LqMeanField {
                sigma,
                t_end,
                mu0,
                action_bound,
                ..
            }
            | MfgPreset::CrowdAversion {
                sigma,
                t_end,
                mu0,
                action_bound,
                ..
            } => {
                check_positive(out, "mfg.preset.sigma", *sigma);
                check_positive(out, "mfg.preset.t_end", *t_end);
                check_positive(out, "mfg.preset.action_bound", *action_bound);
                check_distribution(out, "mfg.preset.mu0", mu0);
            }
        }
        if let Some(eps) = &self.epsilon {
            if eps.n_list.iter().any(|&n| n < 2) {
                out.push("mfg.epsilon.n_list: populations must have at least 2 players".into());
            }
            if eps.paths < 2 || eps.seeds == 0 {
                out.push("mfg.epsilon: need paths >= 2 and seeds >= 1".into());
            }
        }
    }
}

impl AiyagariConfig {
    fn check(&self, out: &mut Vec<String>) {
        if let Err(e) = self.to_spec().validate() {
            out.push(format!("aiyagari: {e}"));
        }
        if self.steps < 100 {
            out.push(format!(
                "aiyagari.steps: need at least 100 grid steps, got {}",
                self.steps
            ));
        }
        check_positive(out, "aiyagari.tol", self.tol);
        if self.households < 10 {
            out.push("aiyagari.households: need at least 10".into());
        }
    }
}
