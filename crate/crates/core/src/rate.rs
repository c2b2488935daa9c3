//! Rate functions of the lower deviation event `{1 <= Z_n <= e^{θn}}`.
//!
//! * `Λ(θ) = sup_{λ <= 0} (λθ - φ(λ))`, the lower Cramér transform of the
//!   environment random walk, zero for `θ >= E[X]`.
//! * `χ(θ, ρ, Λ) = inf_{t in [0,1]} (tρ + (1-t)Λ(θ/(1-t)))` with `0·∞ = 0`,
//!   splitting the horizon into a survival phase (cost `ρ` per generation)
//!   and a slow growth phase.
//! * `θ*`, the point where the line through `(0, ρ)` touches `Λ`; below it
//!   the survival phase has positive length.
//!
//! `+∞` is represented by `f64::INFINITY` throughout.

use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::numeric::{bisect, golden_section_min};
use crate::simulator::{self, ParticleConfig};

/// Optimiser tolerance in `t` for `χ`.
const T_TOLERANCE: f64 = 1e-10;
/// Largest `|λ|` explored when bracketing the Legendre optimiser.
const LAMBDA_LIMIT: f64 = 1e4;
/// Relative slack used to detect ties and jump points.
const TIE_SLACK: f64 = 1e-12;

/// A nonincreasing convex rate function on `[0, ∞)`, possibly `+∞` near 0.
pub trait RateFunction {
    fn value(&self, theta: f64) -> f64;

    /// The value is `+∞` strictly below this point.
    fn domain_start(&self) -> f64 {
        f64::NEG_INFINITY
    }

    /// The value is 0 from this point on (`E[X]`).
    fn zero_from(&self) -> f64;
}

impl<R: RateFunction + ?Sized> RateFunction for &R {
    fn value(&self, theta: f64) -> f64 {
        (**self).value(theta)
    }
    fn domain_start(&self) -> f64 {
        (**self).domain_start()
    }
    fn zero_from(&self) -> f64 {
        (**self).zero_from()
    }
}

/// `Λ` for a finite-mixture environment.
#[derive(Debug, Clone)]
pub struct LegendreTransform {
    env: EnvironmentLaw,
    mean: f64,
    min_x: f64,
}

impl LegendreTransform {
    pub fn new(env: &EnvironmentLaw) -> Result<Self> {
        let mean = env.mean_log_mean();
        if mean <= 0.0 {
            return Err(Error::NotSupercritical { mean_log_mean: mean });
        }
        Ok(LegendreTransform { env: env.clone(), mean, min_x: env.min_log_mean() })
    }

    pub fn env(&self) -> &EnvironmentLaw {
        &self.env
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `(Λ(θ), λ_θ)`; `λ_θ = -∞` where the supremum is only approached.
    pub fn lambda_at(&self, theta: f64) -> (f64, f64) {
        if theta >= self.mean {
            return (0.0, 0.0);
        }
        let edge = TIE_SLACK * self.min_x.abs().max(1.0);
        if theta < self.min_x - edge {
            return (f64::INFINITY, f64::NEG_INFINITY);
        }
        if theta <= self.min_x + edge {
            // the walk must take its smallest step every generation
            return (-self.env.prob_min_log_mean().ln(), f64::NEG_INFINITY);
        }
        // φ' is increasing; find λ <= 0 with φ'(λ) = θ
        let slope = |lambda: f64| self.env.cumulant_derivative(lambda) - theta;
        let mut lo = -1.0;
        while slope(lo) > 0.0 {
            if lo.abs() > LAMBDA_LIMIT {
                let value = lo * theta - self.env.cumulant(lo);
                return (value, lo);
            }
            lo *= 2.0;
        }
        let lambda = bisect(slope, lo, 0.0, 200);
        let value = lambda * theta - self.env.cumulant(lambda);
        (value.max(0.0), lambda)
    }
}

impl RateFunction for LegendreTransform {
    fn value(&self, theta: f64) -> f64 {
        self.lambda_at(theta).0
    }

    fn domain_start(&self) -> f64 {
        self.min_x
    }

    fn zero_from(&self) -> f64 {
        self.mean
    }
}

/// Which phase dominates the optimal path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChiRegime {
    /// `θ < θ*`: a survival period of positive length.
    SurvivalDominated,
    /// `θ >= θ*`: `χ = Λ(θ)`.
    WalkDominated,
}

impl ChiRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChiRegime::SurvivalDominated => "survival-dominated",
            ChiRegime::WalkDominated => "walk-dominated",
        }
    }
}

/// Phase transition point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaStar {
    pub value: f64,
    /// `ρ = 0` or `ρ >= Λ(0)`: no proper tangent point.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiResult {
    pub theta: f64,
    pub rho: f64,
    pub value: f64,
    pub t_theta: f64,
    pub theta_star: f64,
    pub regime: ChiRegime,
}

/// `t ρ + (1 - t) Λ(θ / (1 - t))` with `0·∞ = 0` at `t = 1`.
fn split_cost<R: RateFunction + ?Sized>(theta: f64, rho: f64, rate: &R, t: f64) -> f64 {
    if t >= 1.0 {
        return rho;
    }
    let mut arg = theta / (1.0 - t);
    let start = rate.domain_start();
    if arg < start && arg >= start - TIE_SLACK * start.abs().max(1.0) {
        arg = start;
    }
    let walk = rate.value(arg);
    if walk == 0.0 {
        t * rho
    } else {
        t * rho + (1.0 - t) * walk
    }
}

/// Evaluate `χ(θ, ρ, Λ)` and its optimal split `t_θ`.
pub fn chi<R: RateFunction + ?Sized>(theta: f64, rho: f64, rate: &R) -> Result<ChiResult> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::Domain(format!("chi needs theta > 0, got {theta}")));
    }
    if rho.is_nan() || rho < 0.0 {
        return Err(Error::Domain(format!("chi needs rho >= 0, got {rho}")));
    }
    let star = theta_star(rho, rate);
    let regime = if theta < star.value {
        ChiRegime::SurvivalDominated
    } else {
        ChiRegime::WalkDominated
    };
    let result = |value, t_theta| ChiResult {
        theta,
        rho,
        value,
        t_theta,
        theta_star: star.value,
        regime,
    };
    if rho == 0.0 {
        return Ok(result(0.0, 1.0));
    }
    let mean = rate.zero_from();
    if theta >= mean {
        return Ok(result(0.0, 0.0));
    }
    let start = rate.domain_start();
    let t_lo = if start > theta { 1.0 - theta / start } else { 0.0 };
    let t_hi = 1.0 - theta / mean;
    let cost = |t: f64| split_cost(theta, rho, rate, t);
    let (mut t_best, mut best) = golden_section_min(cost, t_lo, t_hi, T_TOLERANCE);
    if rho < best {
        // only reachable when Λ is infinite on the whole search interval
        t_best = 1.0;
        best = rho;
    }
    if !best.is_finite() {
        return Ok(result(f64::INFINITY, t_best));
    }
    // smallest minimiser: the sublevel set of a convex function is an interval
    let level = best + TIE_SLACK * best.abs();
    let t_theta = if cost(t_lo) <= level {
        t_lo
    } else if t_best > t_lo {
        bisect(|t| if cost(t) <= level { 1.0 } else { -1.0 }, t_lo, t_best, 100)
    } else {
        t_best
    };
    let value = cost(t_theta).min(best);
    Ok(result(value, t_theta))
}

/// The maximiser of `(ρ - Λ(θ)) / θ` over `(0, E[X]]`.
pub fn theta_star<R: RateFunction + ?Sized>(rho: f64, rate: &R) -> ThetaStar {
    let mean = rate.zero_from();
    if rho == 0.0 {
        return ThetaStar { value: mean, degenerate: true };
    }
    let at_zero = rate.value(0.0);
    if at_zero.is_finite() && rho >= at_zero * (1.0 - TIE_SLACK) {
        return ThetaStar { value: 0.0, degenerate: true };
    }
    let slope = |theta: f64| {
        let l = rate.value(theta);
        if l.is_infinite() {
            f64::NEG_INFINITY
        } else {
            (rho - l) / theta
        }
    };
    const GRID: usize = 512;
    let lo = mean * 1e-8;
    let grid: Vec<f64> = (0..GRID)
        .map(|i| lo * (mean / lo).powf(i as f64 / (GRID - 1) as f64))
        .collect();
    let (i_best, _) = grid
        .iter()
        .map(|&theta| slope(theta))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    // keep the bracket where Λ is finite, or golden section chases +∞ ties
    let a = if i_best == 0 { 0.0 } else { grid[i_best - 1] }.max(rate.domain_start().min(grid[i_best]));
    let b = grid[(i_best + 1).min(GRID - 1)];
    let (theta, _) = golden_section_min(
        |theta| if theta <= 0.0 { f64::INFINITY } else { -slope(theta) },
        a,
        b,
        1e-13 * mean,
    );
    let theta = if slope(theta) >= slope(grid[i_best]) { theta } else { grid[i_best] };
    ThetaStar { value: theta.clamp(0.0, mean), degenerate: false }
}

/// `χ` through the tangent representation: linear interpolation between
/// `(0, ρ)` and `(θ*, Λ(θ*))` below `θ*`, `Λ(θ)` above.
pub fn chi_piecewise<R: RateFunction + ?Sized>(theta: f64, rho: f64, rate: &R, star: f64) -> f64 {
    if theta < star {
        let frac = theta / star;
        rho * (1.0 - frac) + frac * rate.value(star)
    } else {
        rate.value(theta)
    }
}

/// `f_θ` on the given time grid: zero until `t_θ`, then linear up to `θ` at 1.
pub fn most_probable_path(theta: f64, chi: &ChiResult, grid: &[f64]) -> Vec<(f64, f64)> {
    let t0 = chi.t_theta;
    grid.iter()
        .map(|&t| {
            let y = if t >= 1.0 {
                theta
            } else if t < t0 {
                0.0
            } else {
                theta / (1.0 - t0) * (t - t0)
            };
            (t, y)
        })
        .collect()
}

/// How `ρ` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoRegime {
    /// Galton-Watson: `-log f'(p_e)`.
    GwExplicit,
    /// Linear fractional environment: `-log E[e^{-X}]` or `Λ(0)`.
    LfExplicit,
    /// `P(Z_1 = 0) = 0`: `-z log E[Q(1)]`.
    NoExtinction,
    /// Particle estimate.
    MonteCarlo,
}

impl RhoRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            RhoRegime::GwExplicit => "gw-explicit",
            RhoRegime::LfExplicit => "lf-explicit",
            RhoRegime::NoExtinction => "no-extinction",
            RhoRegime::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRate {
    pub value: f64,
    pub regime: RhoRegime,
    pub start_state: u64,
    /// Standard error of a Monte Carlo value.
    pub stderr: Option<f64>,
}

/// The explicit survival rate, if the environment falls in a closed-form case.
pub fn survival_rate_explicit(env: &EnvironmentLaw, z: u64) -> Result<Option<SurvivalRate>> {
    let mean = env.mean_log_mean();
    if mean <= 0.0 {
        return Err(Error::NotSupercritical { mean_log_mean: mean });
    }
    if z == 0 {
        return Err(Error::Domain("start state must be >= 1".into()));
    }
    let make = |value: f64, regime| SurvivalRate { value, regime, start_state: z, stderr: None };
    let positive = env.components().iter().filter(|c| c.weight > 0.0);
    if positive.clone().all(|c| c.dist.pmf(0) == 0.0) {
        let q1 = env.expectations().mean_prob_one;
        let value = if q1 > 0.0 { -(z as f64) * q1.ln() } else { f64::INFINITY };
        return Ok(Some(make(value, RhoRegime::NoExtinction)));
    }
    if positive.clone().count() == 1 {
        let dist = &positive.clone().next().expect("one component").dist;
        let pe = dist.extinction_fixed_point();
        let slope = dist.pgf_derivative(pe)?;
        return Ok(Some(make(-slope.ln(), RhoRegime::GwExplicit)));
    }
    if positive.clone().all(|c| c.dist.is_linear_fractional()) {
        let e = env.expectations();
        let value = if e.mean_log_mean_inverse_mean >= 0.0 {
            -e.mean_inverse_mean.ln()
        } else {
            LegendreTransform::new(env)?.value(0.0)
        };
        return Ok(Some(make(value.max(0.0), RhoRegime::LfExplicit)));
    }
    Ok(None)
}

/// `ρ` (or `ρ_z`) for the environment: explicit where possible, otherwise a
/// particle estimate when a budget is given.
pub fn survival_rate(
    env: &EnvironmentLaw,
    z: u64,
    budget: Option<&ParticleConfig>,
) -> Result<SurvivalRate> {
    if let Some(rate) = survival_rate_explicit(env, z)? {
        return Ok(rate);
    }
    let Some(cfg) = budget else {
        return Err(Error::RhoUnavailable);
    };
    let est = simulator::estimate_rho(env, z, cfg)?;
    Ok(SurvivalRate {
        value: est.rate_hat,
        regime: RhoRegime::MonteCarlo,
        start_state: z,
        stderr: Some(est.stderr),
    })
}

/// `θ` grid log-spaced on `[1e-4 E[X], E[X]]`.
pub fn default_theta_grid(mean: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![mean],
        _ => {
            let lo = 1e-4 * mean;
            (0..points)
                .map(|i| {
                    if i + 1 == points {
                        mean
                    } else {
                        lo * (mean / lo).powf(i as f64 / (points - 1) as f64)
                    }
                })
                .collect()
        }
    }
}

/// `Λ` and `λ_θ` tabulated on a grid.
#[derive(Debug, Clone)]
pub struct RateFunctionTable {
    pub thetas: Vec<f64>,
    pub lambda_values: Vec<f64>,
    pub argmax_lambdas: Vec<f64>,
}

impl RateFunctionTable {
    pub fn new(transform: &LegendreTransform, thetas: Vec<f64>) -> Self {
        let (lambda_values, argmax_lambdas) = thetas.iter().map(|&t| transform.lambda_at(t)).unzip();
        RateFunctionTable { thetas, lambda_values, argmax_lambdas }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offspring::OffspringDistribution;

    fn geo(m: f64) -> OffspringDistribution {
        OffspringDistribution::linear_fractional(m, 2.0 * m * m).unwrap()
    }

    fn two_point() -> EnvironmentLaw {
        EnvironmentLaw::from_pairs([(2.0 / 3.0, geo(2.0)), (1.0 / 3.0, geo(0.5))]).unwrap()
    }

    fn lf_pair() -> EnvironmentLaw {
        EnvironmentLaw::from_pairs([(0.5, geo(2.0)), (0.5, geo(0.9))]).unwrap()
    }

    fn gw() -> EnvironmentLaw {
        EnvironmentLaw::single(OffspringDistribution::finite(vec![0.25, 0.25, 0.5]).unwrap()).unwrap()
    }

    #[test]
    fn lambda_zero_above_mean() {
        let t = LegendreTransform::new(&two_point()).unwrap();
        assert_eq!(t.lambda_at(t.mean()), (0.0, 0.0));
        assert_eq!(t.lambda_at(1.0), (0.0, 0.0));
    }

    #[test]
    fn lambda_at_zero_closed_form_and_grid_oracle() {
        let env = two_point();
        let t = LegendreTransform::new(&env).unwrap();
        let (value, lambda) = t.lambda_at(0.0);
        // grid search over λ in [-10, 0] with step 1e-5
        let oracle = (0..=1_000_000)
            .map(|i| -10.0 + i as f64 * 1e-5)
            .map(|l| -env.cumulant(l))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((value - (3.0 / (2.0 * 2f64.sqrt())).ln()).abs() < 1e-12);
        assert!((value - oracle).abs() < 1e-9);
        assert!((lambda + 0.5).abs() < 1e-9);
    }

    #[test]
    fn deterministic_environment_is_infinite_below_mean() {
        let env = EnvironmentLaw::single(geo(2.0)).unwrap();
        let t = LegendreTransform::new(&env).unwrap();
        assert_eq!(t.value(0.5), f64::INFINITY);
        assert_eq!(t.value(2f64.ln()), 0.0);
        let star = theta_star(0.1, &t);
        assert!((star.value - 2f64.ln()).abs() < 1e-9, "{star:?}");
    }

    #[test]
    fn not_supercritical_rejected() {
        let env = EnvironmentLaw::single(geo(0.8)).unwrap();
        assert!(matches!(LegendreTransform::new(&env), Err(Error::NotSupercritical { .. })));
        assert!(survival_rate(&env, 1, None).is_err());
    }

    #[test]
    fn boundary_of_domain_is_finite() {
        // θ equal to the smallest log-mean: Λ = -log P(X = min)
        let env = two_point();
        let t = LegendreTransform::new(&env).unwrap();
        let v = t.value(0.5f64.ln());
        assert!((v - 3f64.ln()).abs() < 1e-12);
        assert_eq!(t.value(0.5f64.ln() - 1e-6), f64::INFINITY);
    }

    #[test]
    fn chi_trivial_cases() {
        let t = LegendreTransform::new(&lf_pair()).unwrap();
        let r = chi(0.05, 0.0, &t).unwrap();
        assert_eq!((r.value, r.t_theta), (0.0, 1.0));
        let r = chi(t.mean(), 0.3, &t).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(chi(0.0, 0.3, &t).is_err());
        assert!(chi(-1.0, 0.3, &t).is_err());
    }

    #[test]
    fn chi_lf_survival_branch() {
        let env = lf_pair();
        let t = LegendreTransform::new(&env).unwrap();
        let rho = survival_rate(&env, 1, None).unwrap();
        assert_eq!(rho.regime, RhoRegime::LfExplicit);
        let r = chi(0.05, rho.value, &t).unwrap();
        let e = env.expectations();
        let expected = -0.05 - e.mean_inverse_mean.ln();
        assert!((r.value - expected).abs() < 1e-9, "{} vs {expected}", r.value);
        assert_eq!(r.regime, ChiRegime::SurvivalDominated);
        // direct t-grid infimum with 1e5 points
        let grid_min = (0..=100_000)
            .map(|i| i as f64 / 100_000.0)
            .map(|s| split_cost(0.05, rho.value, &t, s))
            .fold(f64::INFINITY, f64::min);
        assert!(r.value <= grid_min + 1e-12);
        assert!(grid_min - r.value < 1e-7);
    }

    #[test]
    fn theta_star_lf_closed_form() {
        let env = lf_pair();
        let t = LegendreTransform::new(&env).unwrap();
        let rho = survival_rate(&env, 1, None).unwrap().value;
        let e = env.expectations();
        let exact = e.mean_log_mean_inverse_mean / e.mean_inverse_mean;
        let star = theta_star(rho, &t);
        assert!(!star.degenerate);
        assert!((star.value - exact).abs() < 1e-7, "{} vs {exact}", star.value);
    }

    #[test]
    fn theta_star_degenerate_cases() {
        let t = LegendreTransform::new(&lf_pair()).unwrap();
        let s = theta_star(0.0, &t);
        assert!(s.degenerate);
        assert_eq!(s.value, t.mean());
        let s = theta_star(t.value(0.0), &t);
        assert!(s.degenerate);
        assert_eq!(s.value, 0.0);
        // ρ = Λ(0): no survival period at any θ
        let r = chi(0.05, t.value(0.0), &t).unwrap();
        assert!(r.t_theta < 1e-6);
        assert!((r.value - t.value(0.05)).abs() < 1e-9);
    }

    #[test]
    fn gw_survival_rate() {
        let rho = survival_rate(&gw(), 1, None).unwrap();
        assert_eq!(rho.regime, RhoRegime::GwExplicit);
        assert!((rho.value - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn no_extinction_rate() {
        let d = OffspringDistribution::finite(vec![0.0, 0.5, 0.5]).unwrap();
        let env = EnvironmentLaw::single(d).unwrap();
        let rho = survival_rate(&env, 3, None).unwrap();
        assert_eq!(rho.regime, RhoRegime::NoExtinction);
        assert!((rho.value - 3.0 * 2f64.ln()).abs() < 1e-12);
        let two = EnvironmentLaw::single(OffspringDistribution::finite(vec![0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(survival_rate(&two, 1, None).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn unavailable_without_budget() {
        let a = OffspringDistribution::finite(vec![0.2, 0.3, 0.5]).unwrap();
        let b = OffspringDistribution::finite(vec![0.3, 0.5, 0.2]).unwrap();
        let env = EnvironmentLaw::from_pairs([(0.5, a), (0.5, b)]).unwrap();
        assert_eq!(survival_rate(&env, 1, None), Err(Error::RhoUnavailable));
    }

    #[test]
    fn lf_rate_below_lambda_zero() {
        let env = lf_pair();
        let rho = survival_rate(&env, 1, None).unwrap().value;
        let t = LegendreTransform::new(&env).unwrap();
        assert!(rho <= t.value(0.0));
    }

    #[test]
    fn lf_negative_branch_uses_lambda_zero() {
        // E[X e^{-X}] < 0: mostly subcritical states with a rare large mean
        let env = EnvironmentLaw::from_pairs([(0.5, geo(0.5)), (0.5, geo(5.0))]).unwrap();
        let e = env.expectations();
        assert!(e.mean_log_mean_inverse_mean < 0.0);
        let rho = survival_rate(&env, 1, None).unwrap().value;
        let t = LegendreTransform::new(&env).unwrap();
        assert!((rho - t.value(0.0)).abs() < 1e-12);
    }

    #[test]
    fn most_probable_path_shapes() {
        let t = LegendreTransform::new(&lf_pair()).unwrap();
        let r = chi(0.05, 0.21622, &t).unwrap();
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let path = most_probable_path(0.05, &r, &grid);
        assert_eq!(path.last().unwrap().1, 0.05);
        for &(s, y) in &path {
            if s < r.t_theta {
                assert_eq!(y, 0.0);
            } else {
                let expected = 0.05 / (1.0 - r.t_theta) * (s - r.t_theta);
                assert!((y - expected).abs() < 1e-15);
            }
        }
        let flat = ChiResult { t_theta: 0.0, ..r };
        for (s, y) in most_probable_path(0.05, &flat, &grid) {
            assert!((y - 0.05 * s).abs() < 1e-15);
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = default_theta_grid(0.3, 256);
        assert_eq!(g.len(), 256);
        assert!((g[0] - 3e-5).abs() < 1e-15);
        assert_eq!(*g.last().unwrap(), 0.3);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
