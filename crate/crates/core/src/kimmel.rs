//! Cell division with parasite infection.
//!
//! Cells split in two every generation. Parasites inside a cell reproduce
//! with the law `p_0 = a`, `p_k = (1-a)(1-q) q^(k-1)`, then each parasite
//! goes to the first daughter independently with probability `P`, drawn per
//! cell from a law symmetric about 1/2. Following the parasites of one cell
//! line gives a BPRE whose environment is `P`, and
//! `E[N_n[a, b]] = 2^n P(Z_n in [a, b])` for the number of cells with a
//! parasite count in `[a, b]`.
//!
//! Binomial thinning of a linear fractional law is again linear fractional:
//! with `c = 1 - q(1-p)` the induced law has zero mass
//! `a + (1-a)(1-q)(1-p)/c` and geometric ratio `qp/c`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{Component, EnvironmentLaw};
use crate::error::{Error, Result};
use crate::numeric::{bisect, CompensatedSum};
use crate::offspring::{GeometricParametrization, LinearFractional, OffspringDistribution};
use crate::rate::{self, ChiResult, LegendreTransform};
use crate::rng;

/// Deepest tree simulated cell by cell.
pub const MAX_TREE_DEPTH: u32 = 14;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplittingValue {
    pub weight: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KimmelSpec {
    a: f64,
    q: f64,
    splitting: Vec<SplittingValue>,
}

/// The parasite law and the splitting law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KimmelSpec", into = "KimmelSpec")]
pub struct KimmelModel {
    a: f64,
    q: f64,
    /// Merged by `p` and sorted.
    splitting: Vec<SplittingValue>,
}

impl TryFrom<KimmelSpec> for KimmelModel {
    type Error = Error;

    fn try_from(spec: KimmelSpec) -> Result<Self> {
        KimmelModel::new(spec.a, spec.q, spec.splitting)
    }
}

impl From<KimmelModel> for KimmelSpec {
    fn from(m: KimmelModel) -> Self {
        KimmelSpec { a: m.a, q: m.q, splitting: m.splitting }
    }
}

impl KimmelModel {
    pub fn new(a: f64, q: f64, splitting: Vec<SplittingValue>) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) || !(0.0..1.0).contains(&q) {
            return Err(Error::InvalidModel(format!("need a in [0,1], q in [0,1); got ({a}, {q})")));
        }
        if a == 1.0 && q == 0.0 {
            return Err(Error::InvalidModel("a = 1, q = 0: no parasites ever".into()));
        }
        if splitting.is_empty() {
            return Err(Error::InvalidModel("empty splitting law".into()));
        }
        let mut merged: Vec<SplittingValue> = Vec::new();
        for s in splitting {
            if !(s.p > 0.0 && s.p < 1.0) {
                return Err(Error::InvalidModel(format!("splitting value {} not in (0,1)", s.p)));
            }
            if !(s.weight.is_finite() && s.weight > 0.0) {
                return Err(Error::InvalidModel(format!("splitting weight {} must be > 0", s.weight)));
            }
            match merged.iter_mut().find(|m| (m.p - s.p).abs() <= SYMMETRY_TOLERANCE) {
                Some(m) => m.weight += s.weight,
                None => merged.push(s),
            }
        }
        let total: f64 = merged.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > SYMMETRY_TOLERANCE {
            return Err(Error::InvalidModel(format!("splitting weights sum to {total}")));
        }
        for s in &merged {
            let mirror: f64 = merged
                .iter()
                .filter(|m| (m.p - (1.0 - s.p)).abs() <= SYMMETRY_TOLERANCE)
                .map(|m| m.weight)
                .sum();
            if (mirror - s.weight).abs() > SYMMETRY_TOLERANCE {
                return Err(Error::InvalidModel(format!(
                    "splitting law not symmetric about 1/2 at p = {}",
                    s.p
                )));
            }
        }
        merged.sort_by(|x, y| x.p.total_cmp(&y.p));
        Ok(KimmelModel { a, q, splitting: merged })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn splitting(&self) -> &[SplittingValue] {
        &self.splitting
    }

    /// `Σ k p_k`.
    pub fn parasite_mean(&self) -> f64 {
        (1.0 - self.a) / (1.0 - self.q)
    }

    pub fn parasite_law(&self) -> Result<GeometricParametrization> {
        GeometricParametrization::new(self.a, self.q)
    }

    /// Law of the parasites inherited by one daughter when the splitting
    /// parameter is `p`.
    pub fn induced_law(&self, p: f64) -> Result<LinearFractional> {
        let (a, q) = (self.a, self.q);
        let c = 1.0 - q * (1.0 - p);
        LinearFractional::from_zero_mass_and_ratio(a + (1.0 - a) * (1.0 - q) * (1.0 - p) / c, q * p / c)
    }

    /// The BPRE environment: one linear fractional component per splitting value.
    pub fn induced_environment(&self) -> Result<EnvironmentLaw> {
        if self.a == 1.0 {
            return Err(Error::NotSupercritical { mean_log_mean: f64::NEG_INFINITY });
        }
        let components = self
            .splitting
            .iter()
            .map(|s| {
                Ok(Component {
                    weight: s.weight,
                    dist: OffspringDistribution::LinearFractional(self.induced_law(s.p)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        EnvironmentLaw::new(components)
    }

    /// `E[X] = log Σ k p_k + E[log P]`.
    pub fn mean_log_mean(&self) -> f64 {
        self.parasite_mean().ln() + self.splitting.iter().map(|s| s.weight * s.p.ln()).sum::<f64>()
    }

    pub fn sample_splitting<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for s in &self.splitting {
            acc += s.weight;
            if u < acc {
                return s.p;
            }
        }
        self.splitting[self.splitting.len() - 1].p
    }

    /// Rate functions of the induced BPRE.
    pub fn analyze(&self) -> Result<KimmelAnalysis> {
        let env = self.induced_environment()?;
        let transform = LegendreTransform::new(&env)?;
        let rho = rate::survival_rate(&env, 1, None)?;
        let star = rate::theta_star(rho.value, &transform);
        Ok(KimmelAnalysis { mean: transform.mean(), env, transform, rho: rho.value, theta_star: star.value })
    }
}

/// Where infected cells with at most `e^{θn}` parasites grow in expected number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaWindow {
    /// `0` when the window reaches down to `0+`.
    pub low: f64,
    pub high: f64,
}

impl ThetaWindow {
    pub fn contains(&self, theta: f64) -> bool {
        theta > self.low && theta <= self.high
    }

    pub fn reaches_zero(&self) -> bool {
        self.low == 0.0
    }
}

/// The induced BPRE with its `Λ`, `ρ` and `θ*`.
#[derive(Debug, Clone)]
pub struct KimmelAnalysis {
    pub env: EnvironmentLaw,
    pub transform: LegendreTransform,
    pub rho: f64,
    pub theta_star: f64,
    pub mean: f64,
}

impl KimmelAnalysis {
    pub fn chi(&self, theta: f64) -> Result<ChiResult> {
        rate::chi(theta, self.rho, &self.transform)
    }

    /// `log E[N_n[1, e^{θn}]] ≈ n (log 2 - χ(θ))`.
    pub fn expected_infected(&self, theta: f64, n: u32) -> Result<f64> {
        if !(theta > 0.0 && theta <= self.mean) {
            return Err(Error::Domain(format!("theta {theta} outside (0, E[X]] = (0, {}]", self.mean)));
        }
        Ok(n as f64 * (std::f64::consts::LN_2 - self.chi(theta)?.value))
    }

    /// `{θ in (0, E[X]] : χ(θ) < log 2}`, an interval ending at `E[X]`
    /// because `χ` is nonincreasing and vanishes there.
    pub fn theta_window(&self) -> Result<ThetaWindow> {
        let ln2 = std::f64::consts::LN_2;
        if self.rho < ln2 {
            return Ok(ThetaWindow { low: 0.0, high: self.mean });
        }
        let excess = |theta: f64| self.chi(theta).map(|c| c.value - ln2).unwrap_or(f64::INFINITY);
        let low = bisect(excess, self.mean * 1e-12, self.mean, 200);
        Ok(ThetaWindow { low, high: self.mean })
    }
}

/// Number of cells at depth `n` whose parasite count lies in `[1, upper]`,
/// starting from one cell with `z0` parasites.
pub fn simulate_tree<R: Rng + ?Sized>(
    model: &KimmelModel,
    z0: u64,
    n: u32,
    upper: u64,
    rng: &mut R,
) -> Result<u64> {
    if n > MAX_TREE_DEPTH {
        return Err(Error::Domain(format!("tree depth {n} exceeds {MAX_TREE_DEPTH}")));
    }
    let law = OffspringDistribution::Geometric(model.parasite_law()?);
    let mut cells = vec![z0];
    let mut next = Vec::with_capacity(1 << n);
    for _ in 0..n {
        next.clear();
        for &k in &cells {
            let total = law.sample_total(k, u64::MAX, rng).value;
            let p = model.sample_splitting(rng);
            let first = if total == 0 {
                0
            } else {
                Binomial::new(total, p).expect("valid binomial").sample(rng)
            };
            next.push(first);
            next.push(total - first);
        }
        std::mem::swap(&mut cells, &mut next);
    }
    Ok(cells.iter().filter(|&&k| k >= 1 && k <= upper).count() as u64)
}

/// Mean and standard error of `N_n[1, upper]` over `reps` independent trees.
pub fn tree_mean_infected(
    model: &KimmelModel,
    n: u32,
    upper: u64,
    reps: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if reps < 2 {
        return Err(Error::Domain("need at least 2 tree replicates".into()));
    }
    let counts: Vec<u64> = (0..reps)
        .into_par_iter()
        .map(|i| simulate_tree(model, 1, n, upper, &mut rng::stream(seed, i)))
        .collect::<Result<_>>()?;
    let r = reps as f64;
    let mean = counts.iter().map(|&c| c as f64).collect::<CompensatedSum>().value() / r;
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (r - 1.0);
    Ok((mean, (var / r).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64, q: f64, ps: &[(f64, f64)]) -> Result<KimmelModel> {
        KimmelModel::new(a, q, ps.iter().map(|&(weight, p)| SplittingValue { weight, p }).collect())
    }

    #[test]
    fn symmetric_pair_at_half_collapses() {
        let m = model(0.1, 0.8, &[(0.5, 0.5), (0.5, 0.5)]).unwrap();
        assert_eq!(m.splitting(), &[SplittingValue { weight: 1.0, p: 0.5 }]);
        assert_eq!(m.induced_environment().unwrap().len(), 1);
    }

    #[test]
    fn order_of_splitting_values_is_irrelevant() {
        let x = model(0.1, 0.8, &[(0.5, 0.3), (0.5, 0.7)]).unwrap();
        let y = model(0.1, 0.8, &[(0.5, 0.7), (0.5, 0.3)]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn asymmetric_law_rejected() {
        assert!(model(0.1, 0.8, &[(0.6, 0.3), (0.4, 0.7)]).is_err());
        assert!(model(0.1, 0.8, &[(1.0, 0.3)]).is_err());
        assert!(model(0.1, 0.8, &[(1.0, 0.0)]).is_err());
        assert!(model(1.0, 0.0, &[(1.0, 0.5)]).is_err());
    }

    #[test]
    fn no_parasite_reproduction_is_not_supercritical() {
        let m = model(1.0, 0.5, &[(1.0, 0.5)]).unwrap();
        assert!(matches!(m.induced_environment(), Err(Error::NotSupercritical { .. })));
    }

    #[test]
    fn induced_means() {
        let m = model(0.1, 0.8, &[(0.5, 0.3), (0.5, 0.7)]).unwrap();
        let env = m.induced_environment().unwrap();
        let big_m = m.parasite_mean();
        for (c, s) in env.components().iter().zip(m.splitting()) {
            assert!((c.dist.mean() - s.p * big_m).abs() < 1e-12);
        }
        assert!((env.mean_log_mean() - m.mean_log_mean()).abs() < 1e-12);
    }

    #[test]
    fn window_contains_mean() {
        let m = model(0.1, 0.8, &[(0.5, 0.3), (0.5, 0.7)]).unwrap();
        let an = m.analyze().unwrap();
        let w = an.theta_window().unwrap();
        assert!(w.contains(an.mean));
        let n = 10;
        let v = an.expected_infected(an.mean, n).unwrap();
        assert!((v - n as f64 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(an.expected_infected(0.0, n).is_err());
    }

    #[test]
    fn tree_depth_is_capped() {
        let m = model(0.1, 0.8, &[(1.0, 0.5)]).unwrap();
        let mut r = rng::stream(1, 0);
        assert!(simulate_tree(&m, 1, MAX_TREE_DEPTH + 1, 10, &mut r).is_err());
        assert!(simulate_tree(&m, 1, 3, 10, &mut r).unwrap() <= 8);
    }
}
