//! Finite bimatrix games and the Cournot duopoly.
//!
//! Payoff convention in this module: **higher is better** (the worked static
//! games maximize utility, unlike the dynamic chapters of the crate which
//! minimize costs). Best responses return *all* maximizers so ties stay
//! observable.

use crate::error::{Error, Result};

/// Two-player game in normal form. `payoff1[i][j]` / `payoff2[i][j]` are the
/// payoffs when the row player takes action `i` and the column player `j`.
#[derive(Debug, Clone)]
pub struct BimatrixGame {
    payoff1: Vec<Vec<f64>>,
    payoff2: Vec<Vec<f64>>,
}

/// Probabilities over row actions (`p`) and column actions (`q`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl MixedProfile {
    pub fn validate(&self) -> Result<()> {
        for v in [&self.p, &self.q] {
            if v.is_empty() || v.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::invalid("mixed profile needs nonnegative entries"));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("profile sums to {s}, expected 1")));
            }
        }
        Ok(())
    }
}

pub const ROW_PLAYER: usize = 1;
pub const COL_PLAYER: usize = 2;

impl BimatrixGame {
    pub fn new(payoff1: Vec<Vec<f64>>, payoff2: Vec<Vec<f64>>) -> Result<Self> {
        let rows = payoff1.len();
        if rows == 0 || payoff1[0].is_empty() {
            return Err(Error::invalid("payoff matrices must be nonempty"));
        }
        let cols = payoff1[0].len();
        for m in [&payoff1, &payoff2] {
            if m.len() != rows || m.iter().any(|r| r.len() != cols) {
                return Err(Error::invalid("payoff matrices must share one shape"));
            }
            if m.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::invalid("payoff entries must be finite"));
            }
        }
        Ok(BimatrixGame { payoff1, payoff2 })
    }

    /// Table 1.1 of the worked examples: accuse = 0, not accuse = 1.
    pub fn prisoners_dilemma() -> Self {
        Self::new(
            vec![vec![1.0, 3.0], vec![0.0, 2.0]],
            vec![vec![1.0, 0.0], vec![3.0, 2.0]],
        )
        .unwrap()
    }

    /// Table 1.2: heads = 0, tails = 1; zero-sum.
    pub fn matching_pennies() -> Self {
        Self::new(
            vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
            vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
        )
        .unwrap()
    }

    pub fn rows(&self) -> usize {
        self.payoff1.len()
    }

    pub fn cols(&self) -> usize {
        self.payoff1[0].len()
    }

    pub fn payoff(&self, player: usize, row: usize, col: usize) -> f64 {
        match player {
            ROW_PLAYER => self.payoff1[row][col],
            COL_PLAYER => self.payoff2[row][col],
            _ => panic!("player must be 1 or 2"),
        }
    }

    /// All actions of `player` attaining the maximal payoff against a fixed
    /// `opponent_action`; ties all included, ascending order.
    pub fn best_response(&self, player: usize, opponent_action: usize) -> Result<Vec<usize>> {
        let (own_count, payoffs): (usize, Vec<f64>) = match player {
            ROW_PLAYER => {
                if opponent_action >= self.cols() {
                    return Err(Error::invalid("opponent action out of range"));
                }
                (
                    self.rows(),
                    (0..self.rows())
                        .map(|i| self.payoff1[i][opponent_action])
                        .collect(),
                )
            }
            COL_PLAYER => {
                if opponent_action >= self.rows() {
                    return Err(Error::invalid("opponent action out of range"));
                }
                (
                    self.cols(),
                    (0..self.cols())
                        .map(|j| self.payoff2[opponent_action][j])
                        .collect(),
                )
            }
            _ => return Err(Error::invalid("player must be 1 or 2")),
        };
        let best = payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((0..own_count).filter(|&a| payoffs[a] == best).collect())
    }

    /// Pure Nash equilibria: exactly the fixed points of the best-response
    /// correspondence, in row-major order.
    pub fn pure_nash(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let br1 = self.best_response(ROW_PLAYER, j).unwrap();
                let br2 = self.best_response(COL_PLAYER, i).unwrap();
                if br1.contains(&i) && br2.contains(&j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn expected_payoffs(&self, profile: &MixedProfile) -> (f64, f64) {
        let mut u1 = 0.0;
        let mut u2 = 0.0;
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let prob = profile.p[i] * profile.q[j];
                u1 += prob * self.payoff1[i][j];
                u2 += prob * self.payoff2[i][j];
            }
        }
        (u1, u2)
    }

    /// Largest unilateral improvement available to either player against
    /// `profile`; zero (up to tolerance) certifies an equilibrium.
    pub fn deviation_gain(&self, profile: &MixedProfile) -> f64 {
        let (u1, u2) = self.expected_payoffs(profile);
        let mut gain = 0.0f64;
        for i in 0..self.rows() {
            let u: f64 = (0..self.cols())
                .map(|j| profile.q[j] * self.payoff1[i][j])
                .sum();
            gain = gain.max(u - u1);
        }
        for j in 0..self.cols() {
            let u: f64 = (0..self.rows())
                .map(|i| profile.p[i] * self.payoff2[i][j])
                .sum();
            gain = gain.max(u - u2);
        }
        gain
    }

    /// Mixed equilibrium of a 2x2 game: the interior indifference solution
    /// when it exists in (0,1)^2, otherwise a pure equilibrium embedded as a
    /// degenerate profile.
    pub fn mixed_nash_2x2(&self) -> Result<MixedProfile> {
        if self.rows() != 2 || self.cols() != 2 {
            return Err(Error::invalid("mixed solver is restricted to 2x2 games"));
        }
        let a = &self.payoff1;
        let b = &self.payoff2;
        // q makes the row player indifferent, p the column player.
        let denom_q = a[0][0] - a[0][1] - a[1][0] + a[1][1];
        let denom_p = b[0][0] - b[1][0] - b[0][1] + b[1][1];
        if denom_q != 0.0 && denom_p != 0.0 {
            let q = (a[1][1] - a[0][1]) / denom_q;
            let p = (b[1][1] - b[1][0]) / denom_p;
            if p > 0.0 && p < 1.0 && q > 0.0 && q < 1.0 {
                let profile = MixedProfile {
                    p: vec![p, 1.0 - p],
                    q: vec![q, 1.0 - q],
                };
                if self.deviation_gain(&profile) <= 1e-10 {
                    return Ok(profile);
                }
            }
        }
        if let Some(&(i, j)) = self.pure_nash().first() {
            let mut p = vec![0.0, 0.0];
            let mut q = vec![0.0, 0.0];
            p[i] = 1.0;
            q[j] = 1.0;
            return Ok(MixedProfile { p, q });
        }
        // Nash's theorem rules this out for 2x2; reaching it means the
        // numerics above failed.
        Err(Error::Internal(
            "no 2x2 equilibrium found; indifference solve failed".into(),
        ))
    }
}

/// Cournot duopoly with inverse demand `P = a - Q` and marginal cost `c`.
#[derive(Debug, Clone, Copy)]
pub struct Cournot {
    pub a: f64,
    pub c: f64,
}

impl Cournot {
    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !a.is_finite() {
            return Err(Error::invalid("cournot needs a finite, c >= 0"));
        }
        if a <= c {
            return Err(Error::invalid(
                "cournot market is nonpositive: demand intercept must exceed marginal cost",
            ));
        }
        Ok(Cournot { a, c })
    }

    /// Best-response map of either firm to the opponent quantity.
    pub fn best_response(&self, opponent_quantity: f64) -> f64 {
        (self.a - self.c - opponent_quantity) / 2.0
    }

    /// The unique intersection of the two best-response lines.
    pub fn equilibrium(&self) -> (f64, f64) {
        let q = (self.a - self.c) / 3.0;
        (q, q)
    }

    pub fn profit(&self, own: f64, other: f64) -> f64 {
        own * (self.a - own - other) - self.c * own
    }
}

/// Convenience wrapper matching the scenario runner's signature.
pub fn cournot(a: f64, c: f64) -> Result<(f64, f64)> {
    Ok(Cournot::new(a, c)?.equilibrium())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prisoners_dilemma_best_responses_and_nash() {
        let g = BimatrixGame::prisoners_dilemma();
        // accuse = 0: best response to either opponent action is accuse.
        assert_eq!(g.best_response(ROW_PLAYER, 0).unwrap(), vec![0]);
        assert_eq!(g.best_response(ROW_PLAYER, 1).unwrap(), vec![0]);
        assert_eq!(g.pure_nash(), vec![(0, 0)]);
    }

    #[test]
    fn constant_game_ties_everywhere() {
        let g = BimatrixGame::new(
            vec![vec![2.0, 2.0], vec![2.0, 2.0]],
            vec![vec![2.0, 2.0], vec![2.0, 2.0]],
        )
        .unwrap();
        assert_eq!(g.best_response(ROW_PLAYER, 0).unwrap(), vec![0, 1]);
        assert_eq!(g.best_response(COL_PLAYER, 1).unwrap(), vec![0, 1]);
        assert_eq!(g.pure_nash().len(), 4);
    }

    #[test]
    fn matching_pennies_has_no_pure_nash() {
        assert!(BimatrixGame::matching_pennies().pure_nash().is_empty());
    }

    #[test]
    fn one_by_one_game_single_profile() {
        let g = BimatrixGame::new(vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        assert_eq!(g.pure_nash(), vec![(0, 0)]);
    }

    #[test]
    fn matching_pennies_mixed_is_half_half() {
        let profile = BimatrixGame::matching_pennies().mixed_nash_2x2().unwrap();
        assert!((profile.p[0] - 0.5).abs() < 1e-12);
        assert!((profile.q[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn prisoners_dilemma_mixed_degenerates_to_pure() {
        let profile = BimatrixGame::prisoners_dilemma().mixed_nash_2x2().unwrap();
        assert_eq!(profile.p, vec![1.0, 0.0]);
        assert_eq!(profile.q, vec![1.0, 0.0]);
    }

    #[test]
    fn mixed_profile_invariant_under_payoff_translation() {
        let g = BimatrixGame::matching_pennies();
        let shifted = BimatrixGame::new(
            g.payoff1
                .iter()
                .map(|r| r.iter().map(|&x| x + 7.0).collect())
                .collect(),
            g.payoff2.clone(),
        )
        .unwrap();
        assert_eq!(g.mixed_nash_2x2().unwrap(), shifted.mixed_nash_2x2().unwrap());
        assert_eq!(
            g.best_response(ROW_PLAYER, 0).unwrap(),
            shifted.best_response(ROW_PLAYER, 0).unwrap()
        );
    }

    #[test]
    fn index_out_of_range_is_rejected() {
        let g = BimatrixGame::prisoners_dilemma();
        assert!(g.best_response(ROW_PLAYER, 2).is_err());
        assert!(g.best_response(3, 0).is_err());
    }

    #[test]
    fn cournot_closed_form_and_validation() {
        let (q1, q2) = cournot(4.0, 1.0).unwrap();
        assert_eq!((q1, q2), (1.0, 1.0));
        assert!(cournot(1.0, 1.0).is_err());
        assert!(cournot(0.5, 1.0).is_err());
        // Near-degenerate market: output follows the formula limit.
        let (q1, _) = cournot(1.0 + 3e-9, 1.0).unwrap();
        assert!((q1 - 1e-9).abs() < 1e-15);
    }

    #[test]
    fn cournot_best_response_iteration_reaches_equilibrium() {
        let duopoly = Cournot::new(4.0, 1.0).unwrap();
        let mut q = 0.0;
        for _ in 0..200 {
            let next = duopoly.best_response(duopoly.best_response(q));
            if (next - q).abs() < 1e-12 {
                q = next;
                break;
            }
            q = next;
        }
        let (q_star, _) = duopoly.equilibrium();
        assert!((q - q_star).abs() < 1e-10);
        // Off-equilibrium residual of the best-response fixed point.
        assert!((q_star - duopoly.best_response(q_star)).abs() <= 1e-12);
    }
}
