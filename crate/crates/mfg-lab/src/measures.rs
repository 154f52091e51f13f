//! One-dimensional probability measures.
//!
//! [`EmpiricalMeasure`] is a sorted, weighted atom set with CDF/quantile
//! access; it is the object every mean-field coupling in the crate flows
//! through. Wasserstein-1 distances are computed exactly as the L1 distance
//! between CDFs on merged breakpoints, which is what makes tight test
//! tolerances possible. All values here are immutable after construction.

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Atoms closer than this are merged into one (weighted-mean location) so
/// the CDF has no degenerate breakpoints.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// A finitely supported probability measure on the real line.
///
/// Invariants: points strictly increasing after duplicate merge, weights
/// nonnegative and summing to one, CDF right-continuous reaching 1 at the
/// last atom.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
    /// cum[i] = total weight of atoms 0..=i; cum.last() == 1 exactly.
    cum: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Equal-weight empirical measure of a sample, duplicates merged.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical measure needs at least one sample"));
        }
        let n = samples.len() as f64;
        let pairs: Vec<(f64, f64)> = samples.iter().map(|&x| (x, 1.0 / n)).collect();
        Self::from_weighted_pairs(pairs)
    }

    /// Measure from explicit atoms and weights (normalized on input).
    pub fn from_weighted(points: &[f64], weights: &[f64]) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::invalid(
                "weighted measure needs equally many points and weights, at least one",
            ));
        }
        let pairs: Vec<(f64, f64)> = points.iter().copied().zip(weights.iter().copied()).collect();
        Self::from_weighted_pairs(pairs)
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Self {
        Self::from_weighted(&[x], &[1.0]).expect("dirac construction cannot fail")
    }

    fn from_weighted_pairs(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        for &(x, w) in &pairs {
            if !x.is_finite() {
                return Err(Error::invalid(format!("non-finite atom location {x}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(format!("invalid atom weight {w}")));
            }
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(Error::invalid("atom weights must have positive total"));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut points: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, w) in pairs {
            if w == 0.0 {
                continue;
            }
            match points.last() {
                Some(&last) if x - last < ATOM_MERGE_TOL => {
                    // Merge into the running cluster at the weighted mean.
                    let wl = *weights.last().unwrap();
                    let merged = (last * wl + x * w) / (wl + w);
                    *points.last_mut().unwrap() = merged;
                    *weights.last_mut().unwrap() = wl + w;
                }
                _ => {
                    points.push(x);
                    weights.push(w);
                }
            }
        }
        for w in &mut weights {
            *w /= total;
        }
        let mut cum = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cum.push(acc);
        }
        // Pin the top of the CDF to exactly 1 against summation drift.
        *cum.last_mut().unwrap() = 1.0;
        Ok(EmpiricalMeasure { points, weights, cum })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: at least one atom
    }

    /// P[X <= x], right-continuous.
    pub fn cdf(&self, x: f64) -> f64 {
        // Number of atoms with location <= x.
        let k = self.points.partition_point(|&p| p <= x);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// P[X < x] (left limit of the CDF at x).
    pub fn cdf_left(&self, x: f64) -> f64 {
        let k = self.points.partition_point(|&p| p < x);
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// Generalized inverse CDF: the smallest atom x with `cdf(x) >= q`.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::invalid(format!("quantile level {q} outside (0,1]")));
        }
        let k = self.cum.partition_point(|&c| c < q);
        Ok(self.points[k.min(self.points.len() - 1)])
    }

    pub fn mean(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| x * w)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * (x - m) * (x - m))
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// The measure shifted by `c`.
    pub fn translate(&self, c: f64) -> Self {
        let points: Vec<f64> = self.points.iter().map(|&x| x + c).collect();
        Self::from_weighted(&points, &self.weights).expect("translation preserves validity")
    }

    /// Integral of `f` against the measure.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// k-th raw moment.
    pub fn moment(&self, k: u32) -> f64 {
        self.integrate(|x| x.powi(k as i32))
    }

    /// Damped move from `self` toward `other` along the Wasserstein
    /// geodesic: `m` equal-weight atoms at `(1-delta) q_self + delta
    /// q_other` over matched quantile midpoints. Unlike a weight-mixture
    /// followed by resampling, the atoms move continuously, so damped
    /// fixed-point iterations cannot stall on the atom grid. `delta = 1`
    /// reproduces `other` (up to quantile sampling when sizes differ).
    pub fn displacement_mix(
        &self,
        other: &EmpiricalMeasure,
        delta: f64,
        m: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid(format!("mixture weight {delta} outside [0,1]")));
        }
        if delta == 1.0 && other.len() == m {
            return Ok(other.clone());
        }
        let atoms: Vec<f64> = (0..m)
            .map(|i| {
                let q = (i as f64 + 0.5) / m as f64;
                let a = self.quantile(q).expect("q in (0,1)");
                let b = other.quantile(q).expect("q in (0,1)");
                (1.0 - delta) * a + delta * b
            })
            .collect();
        Self::from_samples(&atoms)
    }

    /// Convex `(1-delta, delta)` mixture of `self` and `other`, re-expressed
    /// as `m` equal-weight atoms at the mixture's quantile midpoints.
    /// Resampling an m-atom equal-weight measure with `delta = 1` is the
    /// identity.
    pub fn mix_resample(&self, other: &EmpiricalMeasure, delta: f64, m: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid(format!("mixture weight {delta} outside [0,1]")));
        }
        if delta == 1.0 && other.len() == m {
            return Ok(other.clone());
        }
        let mut pairs: Vec<(f64, f64)> =
            Vec::with_capacity(self.len() + other.len());
        for (&x, &w) in self.points.iter().zip(&self.weights) {
            pairs.push((x, (1.0 - delta) * w));
        }
        for (&x, &w) in other.points.iter().zip(&other.weights) {
            pairs.push((x, delta * w));
        }
        let mixture = Self::from_weighted_pairs(pairs)?;
        let atoms: Vec<f64> = (0..m)
            .map(|i| {
                let q = (i as f64 + 0.5) / m as f64;
                mixture.quantile(q).expect("q in (0,1)")
            })
            .collect();
        Self::from_samples(&atoms)
    }
}

/// Exact Wasserstein-1 (Kantorowich-Rubinstein) distance between two
/// finitely supported measures: the integral of |F - G| over the merged
/// breakpoints of the two CDFs.
pub fn wasserstein1(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let mut total = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev: Option<f64> = None;
    while i < a.points.len() || j < b.points.len() {
        let x = match (a.points.get(i), b.points.get(j)) {
            (Some(&xa), Some(&xb)) => xa.min(xb),
            (Some(&xa), None) => xa,
            (None, Some(&xb)) => xb,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total += (fa - fb).abs() * (x - p);
        }
        while i < a.points.len() && a.points[i] <= x {
            fa = a.cum[i];
            i += 1;
        }
        while j < b.points.len() && b.points[j] <= x {
            fb = b.cum[j];
            j += 1;
        }
        prev = Some(x);
    }
    total
}

/// Sup distance between an empirical CDF and a reference distribution,
/// evaluated at both one-sided limits of every breakpoint.
pub fn sup_cdf_distance(m: &EmpiricalMeasure, reference: &DistributionSpec) -> f64 {
    let mut xs: Vec<f64> = m.points.clone();
    if let DistributionSpec::AtomMixture { points, .. } = reference {
        xs.extend_from_slice(points);
    }
    if let DistributionSpec::Empirical(e) = reference {
        xs.extend_from_slice(e.points());
    }
    let mut sup = 0.0f64;
    for &x in &xs {
        let right = (m.cdf(x) - reference.cdf(x)).abs();
        let left = (m.cdf_left(x) - reference.cdf_left(x)).abs();
        sup = sup.max(right).max(left);
    }
    sup
}

/// A time-indexed family of measures on a strictly increasing grid over
/// [0, T]; the unknown object in every mean-field fixed-point iteration.
#[derive(Debug, Clone)]
pub struct MeasureFlow {
    times: Vec<f64>,
    measures: Vec<EmpiricalMeasure>,
}

impl MeasureFlow {
    pub fn new(times: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.len() != measures.len() || times.is_empty() {
            return Err(Error::invalid(
                "measure flow needs one measure per grid node",
            ));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid("measure flow grid must start at 0"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("measure flow grid must be strictly increasing"));
        }
        Ok(MeasureFlow { times, measures })
    }

    /// Flow holding the same measure at every node of a uniform grid.
    pub fn constant(measure: EmpiricalMeasure, t_end: f64, steps: usize) -> Result<Self> {
        let times = uniform_grid(t_end, steps)?;
        let measures = vec![measure; steps + 1];
        Self::new(times, measures)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn at(&self, idx: usize) -> &EmpiricalMeasure {
        &self.measures[idx]
    }

    /// Node index of time `t`, which must lie on the grid (within 1e-9).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let idx = self
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-9 * (1.0 + t.abs()));
        idx.ok_or_else(|| Error::invalid(format!("time {t} is not on the flow grid")))
    }

    /// Measure at the grid node closest to `t`.
    pub fn nearest(&self, t: f64) -> &EmpiricalMeasure {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &s) in self.times.iter().enumerate() {
            let d = (s - t).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        &self.measures[best]
    }

    /// Largest nodewise Wasserstein-1 distance between two flows on the
    /// same grid.
    pub fn sup_wasserstein1(&self, other: &MeasureFlow) -> Result<f64> {
        if self.times.len() != other.times.len() {
            return Err(Error::invalid("flows live on different grids"));
        }
        Ok(self
            .measures
            .iter()
            .zip(&other.measures)
            .map(|(a, b)| wasserstein1(a, b))
            .fold(0.0, f64::max))
    }

    pub fn mean_path(&self) -> Vec<f64> {
        self.measures.iter().map(|m| m.mean()).collect()
    }
}

/// Uniform grid 0 = t_0 < ... < t_steps = t_end.
pub fn uniform_grid(t_end: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || steps == 0 {
        return Err(Error::invalid("grid needs t_end > 0 and at least one step"));
    }
    let dt = t_end / steps as f64;
    let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    times[steps] = t_end;
    Ok(times)
}

/// Parametric or atomic description of a distribution; used for noise laws
/// and initial conditions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// Finite mixture of point masses.
    AtomMixture { points: Vec<f64>, weights: Vec<f64> },
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Equal-weight atoms at the given sample values.
    Empirical(EmpiricalSamples),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EmpiricalSamples {
    pub samples: Vec<f64>,
}

impl EmpiricalSamples {
    fn measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_samples(&self.samples)
    }

    fn points(&self) -> &[f64] {
        &self.samples
    }
}

impl DistributionSpec {
    pub fn dirac(x: f64) -> Self {
        DistributionSpec::AtomMixture {
            points: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::AtomMixture { points, weights } => {
                EmpiricalMeasure::from_weighted(points, weights)?;
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!(
                        "atom mixture weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            DistributionSpec::Normal { sd, .. } => {
                if *sd > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("normal scale must be positive"))
                }
            }
            DistributionSpec::Uniform { lo, hi } => {
                if hi > lo {
                    Ok(())
                } else {
                    Err(Error::invalid("uniform needs hi > lo"))
                }
            }
            DistributionSpec::Empirical(e) => e.measure().map(|_| ()),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            DistributionSpec::AtomMixture { points, weights } => points
                .iter()
                .zip(weights)
                .filter(|(&p, _)| p <= x)
                .map(|(_, &w)| w)
                .sum(),
            DistributionSpec::Normal { mean, sd } => rng::norm_cdf((x - mean) / sd),
            DistributionSpec::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            DistributionSpec::Empirical(e) => {
                e.measure().map(|m| m.cdf(x)).unwrap_or(f64::NAN)
            }
        }
    }

    /// Left limit of the CDF; differs from [`Self::cdf`] only at atoms.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            DistributionSpec::AtomMixture { points, weights } => points
                .iter()
                .zip(weights)
                .filter(|(&p, _)| p < x)
                .map(|(_, &w)| w)
                .sum(),
            DistributionSpec::Empirical(e) => {
                e.measure().map(|m| m.cdf_left(x)).unwrap_or(f64::NAN)
            }
            _ => self.cdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistributionSpec::AtomMixture { points, weights } => {
                points.iter().zip(weights).map(|(&p, &w)| p * w).sum()
            }
            DistributionSpec::Normal { mean, .. } => *mean,
            DistributionSpec::Uniform { lo, hi } => 0.5 * (lo + hi),
            DistributionSpec::Empirical(e) => {
                e.measure().map(|m| m.mean()).unwrap_or(f64::NAN)
            }
        }
    }

    /// Infimum of the support.
    pub fn support_min(&self) -> f64 {
        match self {
            DistributionSpec::AtomMixture { points, .. } => {
                points.iter().copied().fold(f64::INFINITY, f64::min)
            }
            DistributionSpec::Normal { .. } => f64::NEG_INFINITY,
            DistributionSpec::Uniform { lo, .. } => *lo,
            DistributionSpec::Empirical(e) => {
                e.points().iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            DistributionSpec::AtomMixture { points, weights } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (&p, &w) in points.iter().zip(weights) {
                    acc += w;
                    if u <= acc {
                        return p;
                    }
                }
                *points.last().unwrap()
            }
            DistributionSpec::Normal { mean, sd } => mean + sd * rng::normal(rng),
            DistributionSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            DistributionSpec::Empirical(e) => {
                let pts = e.points();
                pts[rng.random_range(0..pts.len())]
            }
        }
    }

    /// Finite atom representation: exact for atomic kinds, a `resolution`-
    /// point quantile discretization for the continuous kinds.
    pub fn to_atoms(&self, resolution: usize) -> Result<EmpiricalMeasure> {
        match self {
            DistributionSpec::AtomMixture { points, weights } => {
                EmpiricalMeasure::from_weighted(points, weights)
            }
            DistributionSpec::Empirical(e) => e.measure(),
            DistributionSpec::Normal { mean, sd } => {
                let pts: Vec<f64> = (0..resolution)
                    .map(|i| {
                        let q = (i as f64 + 0.5) / resolution as f64;
                        mean + sd * rng::norm_quantile(q)
                    })
                    .collect();
                EmpiricalMeasure::from_samples(&pts)
            }
            DistributionSpec::Uniform { lo, hi } => {
                let pts: Vec<f64> = (0..resolution)
                    .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / resolution as f64)
                    .collect();
                EmpiricalMeasure::from_samples(&pts)
            }
        }
    }
}
