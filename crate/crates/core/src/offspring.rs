//! Reproduction laws on `{0, 1, 2, ...}`.
//!
//! Three families are supported: explicit finite pmfs, linear fractional laws
//! stored by their mean `m` and second factorial moment `b`, and the
//! `(a, q)` geometric parametrisation used for parasite laws, which is a
//! linear fractional law with zero mass `a` and geometric ratio `q`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted finite support size (`K`, so masses for `0..=K`).
pub const MAX_SUPPORT: usize = 1_000_000;

/// Above this many parents a finite-support total is drawn from a Gaussian
/// with matched mean and variance.
pub const GAUSSIAN_THRESHOLD: u64 = 1_000_000;

const SUM_TOLERANCE: f64 = 1e-12;

/// Lines below this count are summed draw by draw.
const DIRECT_SUM_LIMIT: u64 = 16;

/// Mean and second moments of a law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    /// `f''(1) = E[N(N-1)]`.
    pub second_factorial: f64,
    /// `E[N^2]`.
    pub second: f64,
}

impl Moments {
    pub fn variance(&self) -> f64 {
        (self.second - self.mean * self.mean).max(0.0)
    }
}

/// Sum of i.i.d. offspring counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Total {
    pub value: u64,
    /// The true total exceeded the cap; `value` holds the cap.
    pub saturated: bool,
    /// The Gaussian large-population step was used.
    pub approximate: bool,
}

impl Total {
    fn exact(value: u128, cap: u64) -> Self {
        if value > cap as u128 {
            Total { value: cap, saturated: true, approximate: false }
        } else {
            Total { value: value as u64, saturated: false, approximate: false }
        }
    }
}

/// Explicit pmf on `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSupport {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    moments: Moments,
}

impl FiniteSupport {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty pmf".into()));
        }
        if probs.len() > MAX_SUPPORT + 1 {
            return Err(Error::InvalidDistribution(format!(
                "support larger than {MAX_SUPPORT} states"
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("mass {bad} is not a probability")));
        }
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        let (mut mean, mut fact2) = (0.0, 0.0);
        for (k, &p) in probs.iter().enumerate() {
            acc += p;
            cdf.push(acc);
            let k = k as f64;
            mean += k * p;
            fact2 += k * (k - 1.0) * p;
        }
        if (acc - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("masses sum to {acc}, not 1")));
        }
        let moments = Moments { mean, second_factorial: fact2, second: fact2 + mean };
        Ok(FiniteSupport { probs, cdf, moments })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pmf(&self, k: u64) -> f64 {
        self.probs.get(k as usize).copied().unwrap_or(0.0)
    }

    pub fn pgf(&self, s: f64) -> f64 {
        self.probs.iter().rev().fold(0.0, |acc, &p| acc * s + p)
    }

    pub fn pgf_derivative(&self, s: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, &p)| acc * s + k as f64 * p)
    }

    pub fn moments(&self) -> Moments {
        self.moments
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let k = self.cdf.partition_point(|&c| c <= u);
        k.min(self.probs.len() - 1) as u64
    }

    fn sample_total<R: Rng + ?Sized>(&self, z: u64, cap: u64, rng: &mut R) -> Total {
        if z > GAUSSIAN_THRESHOLD {
            let mean = z as f64 * self.moments.mean;
            let sd = (z as f64 * self.moments.variance()).sqrt();
            let draw = if sd > 0.0 {
                Normal::new(mean, sd).expect("finite normal parameters").sample(rng)
            } else {
                mean
            };
            let draw = draw.round().max(0.0);
            let saturated = draw >= cap as f64;
            let value = if saturated { cap } else { draw as u64 };
            return Total { value, saturated, approximate: true };
        }
        if z <= DIRECT_SUM_LIMIT || z < self.probs.len() as u64 {
            let total: u128 = (0..z).map(|_| self.sample(rng) as u128).sum();
            return Total::exact(total, cap);
        }
        // Multinomial split of the z lines, one conditional binomial per state.
        let mut lines = z;
        let mut rest = 1.0;
        let mut total: u128 = 0;
        for (k, &p) in self.probs.iter().enumerate() {
            if lines == 0 {
                break;
            }
            let share = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 1.0 };
            let count = if k + 1 == self.probs.len() || share >= 1.0 {
                lines
            } else if share <= 0.0 {
                0
            } else {
                Binomial::new(lines, share).expect("valid binomial").sample(rng)
            };
            total += k as u128 * count as u128;
            lines -= count;
            rest -= p;
        }
        Total::exact(total, cap)
    }
}

/// Linear fractional law with generating function
/// `f(s) = 1 - (1 - s) / (1/m + b (1 - s) / (2 m^2))`.
///
/// Equivalently `p_0 = f(0)` and `p_k = (1 - p_0)(1 - r) r^(k-1)` for `k >= 1`
/// with ratio `r = b / (2m + b)`. A pmf exists iff `b >= 2m(m - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFractional {
    mean: f64,
    second_factorial: f64,
    zero_mass: f64,
    ratio: f64,
}

impl LinearFractional {
    pub fn new(mean: f64, second_factorial: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::InvalidDistribution(format!("LF mean {mean} must be > 0")));
        }
        if !(second_factorial.is_finite() && second_factorial >= 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "LF second factorial moment {second_factorial} must be >= 0"
            )));
        }
        let denom = 2.0 * mean + second_factorial;
        let positive_mass = 2.0 * mean * mean / denom;
        if positive_mass > 1.0 + 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "LF(m={mean}, b={second_factorial}) has f(0) < 0; need b >= 2m(m-1)"
            )));
        }
        Ok(LinearFractional {
            mean,
            second_factorial,
            zero_mass: (1.0 - positive_mass).max(0.0),
            ratio: second_factorial / denom,
        })
    }

    /// Law with `p_0 = zero_mass` and geometric tail ratio `ratio`.
    pub fn from_zero_mass_and_ratio(zero_mass: f64, ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&zero_mass) || !(0.0..1.0).contains(&ratio) {
            return Err(Error::InvalidDistribution(format!(
                "need p0 in [0,1) and ratio in [0,1), got ({zero_mass}, {ratio})"
            )));
        }
        let survive = 1.0 - zero_mass;
        let mean = survive / (1.0 - ratio);
        let second_factorial = 2.0 * survive * ratio / ((1.0 - ratio) * (1.0 - ratio));
        Ok(LinearFractional { mean, second_factorial, zero_mass, ratio })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_factorial(&self) -> f64 {
        self.second_factorial
    }

    pub fn zero_mass(&self) -> f64 {
        self.zero_mass
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn pmf(&self, k: u64) -> f64 {
        if k == 0 {
            self.zero_mass
        } else {
            (1.0 - self.zero_mass) * (1.0 - self.ratio) * self.ratio.powi((k - 1) as i32)
        }
    }

    fn denominator(&self, s: f64) -> f64 {
        1.0 / self.mean + self.second_factorial * (1.0 - s) / (2.0 * self.mean * self.mean)
    }

    pub fn pgf(&self, s: f64) -> f64 {
        1.0 - (1.0 - s) / self.denominator(s)
    }

    pub fn pgf_derivative(&self, s: f64) -> f64 {
        let d = self.denominator(s);
        1.0 / (self.mean * d * d)
    }

    pub fn moments(&self) -> Moments {
        Moments {
            mean: self.mean,
            second_factorial: self.second_factorial,
            second: self.second_factorial + self.mean,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if rng.random::<f64>() < self.zero_mass {
            return 0;
        }
        if self.ratio == 0.0 {
            return 1;
        }
        1 + Geometric::new(1.0 - self.ratio).expect("valid geometric").sample(rng)
    }

    /// Two-stage draw: binomial number of lines with children, then a
    /// negative-binomial number of extra children among them.
    fn sample_total<R: Rng + ?Sized>(&self, z: u64, cap: u64, rng: &mut R) -> Total {
        let lines = if self.zero_mass == 0.0 {
            z
        } else {
            Binomial::new(z, 1.0 - self.zero_mass).expect("valid binomial").sample(rng)
        };
        if lines == 0 || self.ratio == 0.0 {
            return Total::exact(lines as u128, cap);
        }
        let scale = self.ratio / (1.0 - self.ratio);
        let intensity = Gamma::new(lines as f64, scale).expect("valid gamma").sample(rng);
        let extra = if intensity <= 0.0 {
            0.0
        } else {
            match Poisson::new(intensity) {
                Ok(p) => p.sample(rng),
                Err(_) => f64::INFINITY,
            }
        };
        if !extra.is_finite() || extra >= u64::MAX as f64 {
            return Total { value: cap, saturated: true, approximate: false };
        }
        Total::exact(lines as u128 + extra as u128, cap)
    }
}

/// `p_0 = a`, `p_k = (1 - a)(1 - q) q^(k-1)` for `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricParametrization {
    a: f64,
    q: f64,
    law: LinearFractional,
}

impl GeometricParametrization {
    pub fn new(a: f64, q: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::InvalidDistribution(format!("zero mass a={a} must lie in [0,1)")));
        }
        let law = LinearFractional::from_zero_mass_and_ratio(a, q)?;
        Ok(GeometricParametrization { a, q, law })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn as_linear_fractional(&self) -> &LinearFractional {
        &self.law
    }
}

/// Serialized form, tagged by family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OffspringSpec {
    FiniteSupport { probs: Vec<f64> },
    LinearFractional { m: f64, b: f64 },
    Geometric { a: f64, q: f64 },
}

/// A reproduction law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OffspringSpec", into = "OffspringSpec")]
pub enum OffspringDistribution {
    FiniteSupport(FiniteSupport),
    LinearFractional(LinearFractional),
    Geometric(GeometricParametrization),
}

impl TryFrom<OffspringSpec> for OffspringDistribution {
    type Error = Error;

    fn try_from(spec: OffspringSpec) -> Result<Self> {
        Ok(match spec {
            OffspringSpec::FiniteSupport { probs } => Self::FiniteSupport(FiniteSupport::new(probs)?),
            OffspringSpec::LinearFractional { m, b } => {
                Self::LinearFractional(LinearFractional::new(m, b)?)
            }
            OffspringSpec::Geometric { a, q } => Self::Geometric(GeometricParametrization::new(a, q)?),
        })
    }
}

impl From<OffspringDistribution> for OffspringSpec {
    fn from(dist: OffspringDistribution) -> Self {
        match dist {
            OffspringDistribution::FiniteSupport(d) => OffspringSpec::FiniteSupport { probs: d.probs },
            OffspringDistribution::LinearFractional(d) => OffspringSpec::LinearFractional {
                m: d.mean,
                b: d.second_factorial,
            },
            OffspringDistribution::Geometric(d) => OffspringSpec::Geometric { a: d.a, q: d.q },
        }
    }
}

impl OffspringDistribution {
    pub fn finite(probs: Vec<f64>) -> Result<Self> {
        FiniteSupport::new(probs).map(Self::FiniteSupport)
    }

    pub fn linear_fractional(mean: f64, second_factorial: f64) -> Result<Self> {
        LinearFractional::new(mean, second_factorial).map(Self::LinearFractional)
    }

    pub fn geometric(a: f64, q: f64) -> Result<Self> {
        GeometricParametrization::new(a, q).map(Self::Geometric)
    }

    /// The linear fractional view, if the law belongs to that family.
    pub fn as_linear_fractional(&self) -> Option<&LinearFractional> {
        match self {
            Self::FiniteSupport(_) => None,
            Self::LinearFractional(d) => Some(d),
            Self::Geometric(d) => Some(&d.law),
        }
    }

    pub fn is_linear_fractional(&self) -> bool {
        self.as_linear_fractional().is_some()
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match self {
            Self::FiniteSupport(d) => d.pmf(k),
            Self::LinearFractional(d) => d.pmf(k),
            Self::Geometric(d) => d.law.pmf(k),
        }
    }

    /// `f(s) = E[s^N]` for `s` in `[0, 1]`.
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("generating function argument {s} outside [0,1]")));
        }
        Ok(self.pgf_unchecked(s))
    }

    pub(crate) fn pgf_unchecked(&self, s: f64) -> f64 {
        match self {
            Self::FiniteSupport(d) => d.pgf(s),
            Self::LinearFractional(d) => d.pgf(s),
            Self::Geometric(d) => d.law.pgf(s),
        }
    }

    /// `f'(s)` for `s` in `[0, 1]`.
    pub fn pgf_derivative(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("generating function argument {s} outside [0,1]")));
        }
        Ok(match self {
            Self::FiniteSupport(d) => d.pgf_derivative(s),
            Self::LinearFractional(d) => d.pgf_derivative(s),
            Self::Geometric(d) => d.law.pgf_derivative(s),
        })
    }

    pub fn moments(&self) -> Moments {
        match self {
            Self::FiniteSupport(d) => d.moments(),
            Self::LinearFractional(d) => d.moments(),
            Self::Geometric(d) => d.law.moments(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments().mean
    }

    /// All mass on one child.
    pub fn is_degenerate_one(&self) -> bool {
        (self.pmf(1) - 1.0).abs() <= SUM_TOLERANCE
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            Self::FiniteSupport(d) => d.sample(rng),
            Self::LinearFractional(d) => d.sample(rng),
            Self::Geometric(d) => d.law.sample(rng),
        }
    }

    /// Draw the total offspring of `z` independent parents, saturating at `cap`.
    pub fn sample_total<R: Rng + ?Sized>(&self, z: u64, cap: u64, rng: &mut R) -> Total {
        if z == 0 {
            return Total { value: 0, saturated: false, approximate: false };
        }
        match self {
            Self::FiniteSupport(d) => d.sample_total(z, cap, rng),
            Self::LinearFractional(d) => d.sample_total(z, cap, rng),
            Self::Geometric(d) => d.law.sample_total(z, cap, rng),
        }
    }

    /// Smallest fixed point of `f` in `[0, 1]`, the extinction probability of
    /// the Galton-Watson process with this law.
    pub fn extinction_fixed_point(&self) -> f64 {
        if self.mean() <= 1.0 {
            return 1.0;
        }
        if self.pmf(0) == 0.0 {
            return 0.0;
        }
        let upper = 1.0 - 1e-12;
        let excess = |s: f64| self.pgf_unchecked(s) - s;
        if excess(upper) >= 0.0 {
            return 1.0;
        }
        crate::numeric::bisect(excess, 0.0, upper, 200)
    }
}
