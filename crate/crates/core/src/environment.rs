//! I.i.d. environment laws: finite mixtures of reproduction laws.
//!
//! With `X = log m_Q`, everything the rate functions need (cumulant
//! `φ(λ) = log E[e^{λX}]`, its derivative, the tilted law) is a finite sum.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offspring::OffspringDistribution;

const WEIGHT_TOLERANCE: f64 = 1e-12;
const LATTICE_TOLERANCE: f64 = 1e-9;
const LATTICE_MAX_DENOMINATOR: i64 = 1000;

/// One environment state and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    #[serde(flatten)]
    pub dist: OffspringDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentSpec {
    components: Vec<Component>,
}

/// Law of the random reproduction law `Q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvironmentSpec", into = "EnvironmentSpec")]
pub struct EnvironmentLaw {
    components: Vec<Component>,
    log_means: Vec<f64>,
    cdf: Vec<f64>,
}

/// Closed-form environment averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectations {
    /// `E[X]`
    pub mean_log_mean: f64,
    /// `E[e^{-X}]`
    pub mean_inverse_mean: f64,
    /// `E[X e^{-X}]`
    pub mean_log_mean_inverse_mean: f64,
    /// `E[Q(1)]`
    pub mean_prob_one: f64,
}

/// Hypothesis checks and summary statistics of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentDiagnostics {
    pub mean_x: f64,
    pub is_supercritical: bool,
    pub prob_x_negative: f64,
    /// `E[f(0)] = P(Z_1 = 0 | Z_0 = 1)`.
    pub prob_extinction_possible: f64,
    pub assumption1_ok: bool,
    pub assumption2_ok: bool,
    /// `max f''(1) / (f'(1) + f'(1)^2)` over the components.
    pub assumption3_bound: f64,
    pub lattice_flag: bool,
    pub q1_mean: f64,
}

impl EnvironmentDiagnostics {
    pub fn extinction_possible(&self) -> bool {
        self.prob_extinction_possible > 0.0
    }
}

impl TryFrom<EnvironmentSpec> for EnvironmentLaw {
    type Error = Error;

    fn try_from(spec: EnvironmentSpec) -> Result<Self> {
        EnvironmentLaw::new(spec.components)
    }
}

impl From<EnvironmentLaw> for EnvironmentSpec {
    fn from(env: EnvironmentLaw) -> Self {
        EnvironmentSpec { components: env.components }
    }
}

impl EnvironmentLaw {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidEnvironment("no components".into()));
        }
        let mut total = 0.0;
        for c in &components {
            if !c.weight.is_finite() || c.weight < 0.0 {
                return Err(Error::InvalidEnvironment(format!("weight {} is invalid", c.weight)));
            }
            if c.dist.mean() <= 0.0 {
                return Err(Error::InvalidEnvironment(
                    "component with zero mean offspring (log-mean is -inf)".into(),
                ));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidEnvironment(format!("weights sum to {total}, not 1")));
        }
        let log_means = components.iter().map(|c| c.dist.mean().ln()).collect();
        let cdf = components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        Ok(EnvironmentLaw { components, log_means, cdf })
    }

    /// Deterministic environment (a Galton-Watson process).
    pub fn single(dist: OffspringDistribution) -> Result<Self> {
        Self::new(vec![Component { weight: 1.0, dist }])
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, OffspringDistribution)>) -> Result<Self> {
        Self::new(pairs.into_iter().map(|(weight, dist)| Component { weight, dist }).collect())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn log_means(&self) -> &[f64] {
        &self.log_means
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.components[i].weight
    }

    pub fn dist(&self, i: usize) -> &OffspringDistribution {
        &self.components[i].dist
    }

    fn support(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.components
            .iter()
            .zip(&self.log_means)
            .filter(|(c, _)| c.weight > 0.0)
            .map(|(c, &x)| (c.weight, x))
    }

    pub fn min_log_mean(&self) -> f64 {
        self.support().map(|(_, x)| x).fold(f64::INFINITY, f64::min)
    }

    pub fn max_log_mean(&self) -> f64 {
        self.support().map(|(_, x)| x).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `P(X = min X)`.
    pub fn prob_min_log_mean(&self) -> f64 {
        let lo = self.min_log_mean();
        self.support().filter(|&(_, x)| x == lo).map(|(w, _)| w).sum()
    }

    pub fn mean_log_mean(&self) -> f64 {
        self.support().map(|(w, x)| w * x).sum()
    }

    pub fn is_supercritical(&self) -> bool {
        self.mean_log_mean() > 0.0
    }

    /// `φ(λ) = log E[e^{λX}]`, finite for every real `λ`.
    pub fn cumulant(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let shift = self
            .support()
            .map(|(_, x)| lambda * x)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self.support().map(|(w, x)| w * (lambda * x - shift).exp()).sum();
        shift + sum.ln()
    }

    /// `φ'(λ)`, the mean of `X` under the law tilted by `λ`.
    pub fn cumulant_derivative(&self, lambda: f64) -> f64 {
        let shift = self
            .support()
            .map(|(_, x)| lambda * x)
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for (w, x) in self.support() {
            let e = w * (lambda * x - shift).exp();
            num += e * x;
            den += e;
        }
        num / den
    }

    pub fn expectations(&self) -> Expectations {
        let mut e = Expectations {
            mean_log_mean: 0.0,
            mean_inverse_mean: 0.0,
            mean_log_mean_inverse_mean: 0.0,
            mean_prob_one: 0.0,
        };
        for (c, &x) in self.components.iter().zip(&self.log_means) {
            let w = c.weight;
            let inv = (-x).exp();
            e.mean_log_mean += w * x;
            e.mean_inverse_mean += w * inv;
            e.mean_log_mean_inverse_mean += w * x * inv;
            e.mean_prob_one += w * c.dist.pmf(1);
        }
        e
    }

    /// Reweight the components by `m^λ`, leaving the laws themselves unchanged.
    pub fn tilt(&self, lambda: f64) -> EnvironmentLaw {
        let phi = self.cumulant(lambda);
        let mut components = self.components.clone();
        for (c, &x) in components.iter_mut().zip(&self.log_means) {
            if c.weight > 0.0 {
                c.weight *= (lambda * x - phi).exp();
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        let cdf = components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight;
                Some(*acc)
            })
            .collect();
        EnvironmentLaw { components, log_means: self.log_means.clone(), cdf }
    }

    /// Draw a component index.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let mut i = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        // never return a zero-weight component sitting at the top of the cdf
        while self.components[i].weight == 0.0 && i > 0 {
            i -= 1;
        }
        i
    }

    pub fn diagnostics(&self) -> EnvironmentDiagnostics {
        let e = self.expectations();
        let prob_x_negative = self.support().filter(|&(_, x)| x < 0.0).map(|(w, _)| w).sum();
        let prob_extinction_possible =
            self.components.iter().map(|c| c.weight * c.dist.pmf(0)).sum();
        let assumption2_ok = self.components.iter().all(|c| c.dist.pmf(0) < 1.0);
        let assumption3_bound = self
            .components
            .iter()
            .map(|c| {
                let m = c.dist.moments();
                m.second_factorial / (m.mean + m.mean * m.mean)
            })
            .fold(0.0, f64::max);
        EnvironmentDiagnostics {
            mean_x: e.mean_log_mean,
            is_supercritical: e.mean_log_mean > 0.0,
            prob_x_negative,
            prob_extinction_possible,
            // finite mixtures have E[e^{-sX}] < inf for every s
            assumption1_ok: true,
            assumption2_ok,
            assumption3_bound,
            lattice_flag: self.is_lattice(),
            q1_mean: e.mean_prob_one,
        }
    }

    /// Whether all log-means lie on a common lattice `rZ`.
    pub fn is_lattice(&self) -> bool {
        let nonzero: Vec<f64> = self
            .support()
            .map(|(_, x)| x)
            .filter(|x| x.abs() > 1e-15)
            .collect();
        let Some(&reference) = nonzero.first() else {
            return true;
        };
        nonzero.iter().all(|&x| is_rational(x / reference))
    }
}

/// Continued-fraction test: does `x` have a convergent `p/q`, `q <= 1000`,
/// within the lattice tolerance?
fn is_rational(x: f64) -> bool {
    let tol = LATTICE_TOLERANCE * x.abs().max(1.0);
    let (mut h_prev, mut h) = (1i64, x.floor() as i64);
    let (mut k_prev, mut k) = (0i64, 1i64);
    let mut frac = x - x.floor();
    loop {
        if (x - h as f64 / k as f64).abs() <= tol {
            return true;
        }
        if frac.abs() < 1e-15 {
            return false;
        }
        let inv = 1.0 / frac;
        let a = inv.floor();
        frac = inv - a;
        let a = a as i64;
        let (h_next, k_next) = (a * h + h_prev, a * k + k_prev);
        if k_next > LATTICE_MAX_DENOMINATOR {
            return false;
        }
        (h_prev, h, k_prev, k) = (h, h_next, k, k_next);
    }
}
