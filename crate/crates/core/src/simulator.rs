//! Monte Carlo for the BPRE.
//!
//! Generation `k` draws a reproduction law from the environment and replaces
//! `Z_{k-1}` by the total offspring of `Z_{k-1}` independent parents. The
//! estimators below target `P_z(1 <= Z_n <= u)`:
//!
//! * naive: the hit proportion;
//! * tilted: environments drawn from the law reweighted by `m^λ`, each
//!   replicate weighted by `exp(-λ S_n + n φ(λ))`;
//! * particle: fixed-population splitting for the rate of staying in a band.
//!
//! Replicate `i` always uses [`rng::stream`]`(seed, i)` and results are merged
//! in a fixed chunk order, so any thread count gives the same numbers.

use rand::Rng;
use rayon::prelude::*;

use crate::environment::EnvironmentLaw;
use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::rng::{self, StreamRng};

/// Replicates per merge unit.
const CHUNK: u64 = 1024;

/// Shared Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Populations saturate here.
    pub cap: u64,
}

impl SimConfig {
    pub const DEFAULT_CAP: u64 = 1_000_000_000;

    pub fn new(seed: u64) -> Self {
        SimConfig { seed, cap: Self::DEFAULT_CAP }
    }

    pub fn with_cap(self, cap: u64) -> Self {
        SimConfig { cap, ..self }
    }
}

/// One realised path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub z_path: Vec<u64>,
    pub s_path: Vec<f64>,
    pub env_indices: Vec<usize>,
    pub approx_flag: bool,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Naive,
    Tilted { lambda: f64 },
    Particle,
}

impl Weighting {
    pub fn label(&self) -> &'static str {
        match self {
            Weighting::Naive => "naive",
            Weighting::Tilted { .. } => "tilted",
            Weighting::Particle => "particle",
        }
    }
}

/// A probability estimate with its error bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub reps: u64,
    pub n: u32,
    /// `-log(p_hat) / n`; `+∞` when nothing was hit.
    pub rate_hat: f64,
    pub weighting: Weighting,
    /// Kish effective sample size of the likelihood-ratio weights.
    pub ess: Option<f64>,
    /// Replicates that hit the population cap.
    pub saturated: u64,
    /// Replicates that used the Gaussian large-population step.
    pub approximate: u64,
    /// Rule-of-three 95% upper bound on `p` when `p_hat = 0`.
    pub zero_upper_bound: Option<f64>,
    /// Tilted: ESS below 1% of the replicates. Particle: a step lost every particle.
    pub warning: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    z: u64,
    s: f64,
    saturated: bool,
    approximate: bool,
}

/// Run `n` generations keeping only the final state. The environment walk is
/// always completed; offspring sampling stops at extinction or saturation.
fn run_final(env: &EnvironmentLaw, z0: u64, n: u32, cap: u64, rng: &mut StreamRng) -> Outcome {
    let mut out = Outcome { z: z0, s: 0.0, saturated: false, approximate: false };
    let log_means = env.log_means();
    for _ in 0..n {
        let i = env.sample_index(rng);
        out.s += log_means[i];
        if out.z == 0 || out.saturated {
            continue;
        }
        let total = env.dist(i).sample_total(out.z, cap, rng);
        out.z = total.value;
        out.saturated |= total.saturated;
        out.approximate |= total.approximate;
    }
    out
}

/// Simulate one trajectory of `n` generations from `z0` individuals.
pub fn simulate<R: Rng + ?Sized>(
    env: &EnvironmentLaw,
    z0: u64,
    n: u32,
    cap: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    if z0 == 0 {
        return Err(Error::Domain("initial population must be >= 1".into()));
    }
    let mut traj = Trajectory {
        z_path: Vec::with_capacity(n as usize + 1),
        s_path: Vec::with_capacity(n as usize + 1),
        env_indices: Vec::with_capacity(n as usize),
        approx_flag: false,
        saturated: false,
    };
    let (mut z, mut s) = (z0, 0.0);
    traj.z_path.push(z);
    traj.s_path.push(s);
    for _ in 0..n {
        let i = env.sample_index(rng);
        s += env.log_means()[i];
        if z > 0 && !traj.saturated {
            let total = env.dist(i).sample_total(z, cap, rng);
            z = total.value;
            traj.saturated |= total.saturated;
            traj.approx_flag |= total.approximate;
        }
        traj.env_indices.push(i);
        traj.z_path.push(z);
        traj.s_path.push(s);
    }
    Ok(traj)
}

/// `floor(e^{θn})`, saturating at `u64::MAX`.
pub fn theta_bound(theta: f64, n: u32) -> u64 {
    let x = (theta * n as f64).exp().floor();
    if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x as u64
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    hits: CompensatedSum,
    hits_sq: CompensatedSum,
    weights: CompensatedSum,
    weights_sq: CompensatedSum,
    saturated: u64,
    approximate: u64,
}

impl Accumulator {
    fn merge(&mut self, other: &Accumulator) {
        self.hits.merge(&other.hits);
        self.hits_sq.merge(&other.hits_sq);
        self.weights.merge(&other.weights);
        self.weights_sq.merge(&other.weights_sq);
        self.saturated += other.saturated;
        self.approximate += other.approximate;
    }
}

/// Run `reps` independent replicates of `per_rep` in fixed-size chunks and
/// merge in chunk order.
fn replicate<F>(reps: u64, seed: u64, per_rep: F) -> Accumulator
where
    F: Fn(&mut StreamRng) -> (f64, f64, Outcome) + Sync,
{
    let chunks = reps.div_ceil(CHUNK);
    let parts: Vec<Accumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                let mut rng = rng::stream(seed, i);
                let (y, w, out) = per_rep(&mut rng);
                acc.hits.add(y);
                acc.hits_sq.add(y * y);
                acc.weights.add(w);
                acc.weights_sq.add(w * w);
                acc.saturated += out.saturated as u64;
                acc.approximate += out.approximate as u64;
            }
            acc
        })
        .collect();
    parts.iter().fold(Accumulator::default(), |mut acc, p| {
        acc.merge(p);
        acc
    })
}

fn rate_of(p_hat: f64, n: u32) -> f64 {
    if p_hat <= 0.0 {
        f64::INFINITY
    } else if n == 0 {
        0.0
    } else {
        -p_hat.ln() / n as f64
    }
}

/// Estimate `P_{z0}(1 <= Z_n <= upper)`, naively (`lambda = 0` gives the
/// same numbers as the naive estimator) or under the environment tilted by
/// `lambda`.
pub fn estimate_band_prob(
    env: &EnvironmentLaw,
    z0: u64,
    n: u32,
    upper: u64,
    reps: u64,
    weighting: Weighting,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    if z0 == 0 {
        return Err(Error::Domain("initial population must be >= 1".into()));
    }
    if reps == 0 {
        return Err(Error::Domain("reps must be >= 1".into()));
    }
    let lambda = match weighting {
        Weighting::Naive => 0.0,
        Weighting::Tilted { lambda } if lambda <= 0.0 && lambda.is_finite() => lambda,
        Weighting::Tilted { lambda } => {
            return Err(Error::Domain(format!("tilt must be finite and <= 0, got {lambda}")))
        }
        Weighting::Particle => {
            return Err(Error::Domain("particle weighting is only used by estimate_rho".into()))
        }
    };
    let sampling = if lambda == 0.0 { env.clone() } else { env.tilt(lambda) };
    let log_normaliser = n as f64 * env.cumulant(lambda);
    let acc = replicate(reps, cfg.seed, |rng| {
        let out = run_final(&sampling, z0, n, cfg.cap, rng);
        let w = if lambda == 0.0 { 1.0 } else { (-lambda * out.s + log_normaliser).exp() };
        let hit = !out.saturated && out.z >= 1 && out.z <= upper;
        (if hit { w } else { 0.0 }, w, out)
    });
    let r = reps as f64;
    let p_hat = acc.hits.value() / r;
    let (stderr, ess, warning) = match weighting {
        Weighting::Naive => ((p_hat * (1.0 - p_hat) / r).max(0.0).sqrt(), None, false),
        _ => {
            let var = if reps > 1 {
                ((acc.hits_sq.value() - acc.hits.value() * p_hat) / (r - 1.0)).max(0.0)
            } else {
                0.0
            };
            let w = acc.weights.value();
            let ess = w * w / acc.weights_sq.value();
            ((var / r).sqrt(), Some(ess), ess < 0.01 * r)
        }
    };
    Ok(McEstimate {
        p_hat,
        stderr,
        reps,
        n,
        rate_hat: rate_of(p_hat, n),
        weighting,
        ess,
        saturated: acc.saturated,
        approximate: acc.approximate,
        zero_upper_bound: (p_hat == 0.0).then(|| 3.0 / r),
        warning,
    })
}

/// Naive estimate of `P_{z0}(1 <= Z_n <= e^{θn})`.
pub fn estimate_lower_prob(
    env: &EnvironmentLaw,
    z0: u64,
    n: u32,
    theta: f64,
    reps: u64,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::Domain(format!("theta must be > 0, got {theta}")));
    }
    estimate_band_prob(env, z0, n, theta_bound(theta, n), reps, Weighting::Naive, cfg)
}

/// Importance-sampled estimate of `P_{z0}(1 <= Z_n <= e^{θn})` with the
/// environment tilted by `lambda <= 0`.
pub fn estimate_lower_prob_tilted(
    env: &EnvironmentLaw,
    z0: u64,
    n: u32,
    theta: f64,
    lambda: f64,
    reps: u64,
    cfg: &SimConfig,
) -> Result<McEstimate> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::Domain(format!("theta must be > 0, got {theta}")));
    }
    estimate_band_prob(
        env,
        z0,
        n,
        theta_bound(theta, n),
        reps,
        Weighting::Tilted { lambda },
        cfg,
    )
}

/// Empirical mean of the likelihood-ratio weights under the tilted law, with
/// its standard error. The exact value is 1.
pub fn tilted_weight_mean(
    env: &EnvironmentLaw,
    n: u32,
    lambda: f64,
    reps: u64,
    seed: u64,
) -> (f64, f64) {
    let tilted = env.tilt(lambda);
    let log_normaliser = n as f64 * env.cumulant(lambda);
    let acc = replicate(reps, seed, |rng| {
        let mut s = 0.0;
        for _ in 0..n {
            s += tilted.log_means()[tilted.sample_index(rng)];
        }
        let w = (-lambda * s + log_normaliser).exp();
        (w, w, Outcome { z: 0, s, saturated: false, approximate: false })
    });
    mean_and_stderr(&acc, reps)
}

fn mean_and_stderr(acc: &Accumulator, reps: u64) -> (f64, f64) {
    let r = reps as f64;
    let mean = acc.hits.value() / r;
    let var = if reps > 1 {
        ((acc.hits_sq.value() - acc.hits.value() * mean) / (r - 1.0)).max(0.0)
    } else {
        0.0
    };
    (mean, (var / r).sqrt())
}

/// Settings of the fixed-population particle scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleConfig {
    pub horizon: u32,
    /// Upper end `b` of the band `{1, ..., b}`.
    pub band: u64,
    pub particles: usize,
    /// Independent chains used for the batch-means error bar.
    pub chains: usize,
    pub seed: u64,
}

impl ParticleConfig {
    pub const MIN_PARTICLES: usize = 1000;
    pub const MIN_CHAINS: usize = 16;
}

struct ChainResult {
    log_prob: f64,
    /// Log survival over the steps after the burn-in.
    tail_log_prob: f64,
    tail_steps: u32,
    degenerate: bool,
}

fn particle_chain(env: &EnvironmentLaw, z: u64, cfg: &ParticleConfig, chain: u64) -> ChainResult {
    let mut rng = rng::stream(cfg.seed, chain);
    let n = cfg.particles;
    let mut pop = vec![z; n];
    let mut next = Vec::with_capacity(n);
    let burn_in = cfg.horizon / 2;
    let mut log_prob = 0.0;
    let mut tail_log_prob = 0.0;
    let mut tail_steps = 0;
    for step in 0..cfg.horizon {
        next.clear();
        for &p in &pop {
            let i = env.sample_index(&mut rng);
            // anything above the band is dropped, so cap just past it
            let total = env.dist(i).sample_total(p, cfg.band + 1, &mut rng);
            if total.value >= 1 && total.value <= cfg.band {
                next.push(total.value);
            }
        }
        if next.is_empty() {
            return ChainResult { log_prob, tail_log_prob, tail_steps, degenerate: true };
        }
        let log_alpha = (next.len() as f64 / n as f64).ln();
        log_prob += log_alpha;
        if step >= burn_in {
            tail_log_prob += log_alpha;
            tail_steps += 1;
        }
        for slot in pop.iter_mut() {
            *slot = next[rng.random_range(0..next.len())];
        }
    }
    ChainResult { log_prob, tail_log_prob, tail_steps, degenerate: false }
}

/// Particle estimate of the decay rate of `P_z(Z_k in {1..b} for k <= n)`,
/// which converges to `ρ` (or `ρ_z`).
///
/// That probability behaves like `c e^{-ρ n}` with a prefactor `c` that can
/// be far from 1, so `-log P / n` is off by `log c / n`. The rate is taken
/// from the survival fractions of the second half of the horizon, once the
/// particle cloud has settled; `p_hat` still covers the whole horizon.
///
/// A chain in which every particle leaves the band contributes the partial
/// sum up to that step, which underestimates the rate; `warning` is then set.
pub fn estimate_rho(env: &EnvironmentLaw, z: u64, cfg: &ParticleConfig) -> Result<McEstimate> {
    if z == 0 || cfg.band < z {
        return Err(Error::Domain(format!("need 1 <= z <= band, got z={z}, band={}", cfg.band)));
    }
    if cfg.particles < ParticleConfig::MIN_PARTICLES {
        return Err(Error::Domain(format!(
            "need at least {} particles",
            ParticleConfig::MIN_PARTICLES
        )));
    }
    if cfg.chains < 2 {
        return Err(Error::Domain("need at least 2 chains for an error bar".into()));
    }
    if cfg.horizon == 0 {
        return Err(Error::Domain("horizon must be >= 1".into()));
    }
    let results: Vec<ChainResult> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|c| particle_chain(env, z, cfg, c))
        .collect();
    let rates: Vec<f64> = results
        .iter()
        .map(|r| {
            if r.tail_steps > 0 {
                -r.tail_log_prob / r.tail_steps as f64
            } else {
                -r.log_prob / cfg.horizon as f64
            }
        })
        .collect();
    let k = rates.len() as f64;
    let mean = rates.iter().copied().collect::<CompensatedSum>().value() / k;
    let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let stderr = (var / k).sqrt();
    let log_p = results.iter().map(|r| r.log_prob).sum::<f64>() / k;
    Ok(McEstimate {
        p_hat: log_p.exp(),
        stderr,
        reps: (cfg.particles * cfg.chains) as u64,
        n: cfg.horizon,
        rate_hat: mean,
        weighting: Weighting::Particle,
        ess: None,
        saturated: 0,
        approximate: 0,
        zero_upper_bound: None,
        warning: results.iter().any(|r| r.degenerate),
    })
}

/// Mean of `Z_n e^{-S_n}` over replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleCheck {
    pub mean: f64,
    pub stderr: f64,
    pub saturated: u64,
}

/// Empirical mean and standard error of `Z_n e^{-S_n}`; its expectation is
/// `z0` for every `n`.
pub fn martingale_check(
    env: &EnvironmentLaw,
    z0: u64,
    n: u32,
    reps: u64,
    cfg: &SimConfig,
) -> Result<MartingaleCheck> {
    if z0 == 0 || reps == 0 {
        return Err(Error::Domain("need z0 >= 1 and reps >= 1".into()));
    }
    let acc = replicate(reps, cfg.seed, |rng| {
        let out = run_final(env, z0, n, cfg.cap, rng);
        let v = out.z as f64 * (-out.s).exp();
        (v, 1.0, out)
    });
    let (mean, stderr) = mean_and_stderr(&acc, reps);
    Ok(MartingaleCheck { mean, stderr, saturated: acc.saturated })
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

    #[test]
    fn identity_environment_is_frozen() {
        let env =
            EnvironmentLaw::single(OffspringDistribution::linear_fractional(1.0, 0.0).unwrap()).unwrap();
        let mut rng = rng::stream(1, 0);
        let t = simulate(&env, 5, 10, SimConfig::DEFAULT_CAP, &mut rng).unwrap();
        assert!(t.z_path.iter().all(|&z| z == 5));
        assert!(t.s_path.iter().all(|&s| s == 0.0));
        assert_eq!(t.z_path.len(), 11);
    }

    #[test]
    fn extinction_is_absorbing_and_walk_increments_match() {
        let env = two_point();
        for seed in 0..200 {
            let mut rng = rng::stream(seed, 0);
            let t = simulate(&env, 1, 30, SimConfig::DEFAULT_CAP, &mut rng).unwrap();
            if let Some(k) = t.z_path.iter().position(|&z| z == 0) {
                assert!(t.z_path[k..].iter().all(|&z| z == 0));
            }
            for k in 1..t.s_path.len() {
                let step = t.s_path[k] - t.s_path[k - 1];
                assert!((step - env.log_means()[t.env_indices[k - 1]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn walk_mean_follows_lln() {
        let env = two_point();
        let n = 50;
        let reps = 20_000;
        let vals: Vec<f64> = (0..reps)
            .map(|i| {
                let mut rng = rng::stream(9, i);
                simulate(&env, 1, n, 10, &mut rng).unwrap().s_path[n as usize] / n as f64
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        assert!((mean - 2f64.ln() / 3.0).abs() < 4.0 * se);
    }

    #[test]
    fn zero_horizon_is_certain() {
        let env = two_point();
        let est = estimate_lower_prob(&env, 1, 0, 0.1, 100, &SimConfig::new(1)).unwrap();
        assert_eq!(est.p_hat, 1.0);
        assert_eq!(est.rate_hat, 0.0);
    }

    #[test]
    fn zero_reps_rejected() {
        let env = two_point();
        assert!(estimate_lower_prob(&env, 1, 5, 0.1, 0, &SimConfig::new(1)).is_err());
        assert!(estimate_lower_prob(&env, 1, 5, 0.0, 10, &SimConfig::new(1)).is_err());
        assert!(estimate_lower_prob_tilted(&env, 1, 5, 0.1, 0.5, 10, &SimConfig::new(1)).is_err());
    }

    #[test]
    fn zero_tilt_equals_naive() {
        let env = two_point();
        let cfg = SimConfig::new(4);
        let a = estimate_lower_prob(&env, 1, 8, 0.1, 5000, &cfg).unwrap();
        let b = estimate_lower_prob_tilted(&env, 1, 8, 0.1, 0.0, 5000, &cfg).unwrap();
        assert_eq!(a.p_hat, b.p_hat);
        assert_eq!(b.ess, Some(5000.0));
    }

    #[test]
    fn no_hits_reports_infinite_rate() {
        let two = EnvironmentLaw::single(OffspringDistribution::finite(vec![0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        // Z_10 = 1024 > floor(e^{0.1*10}) = 2
        let est = estimate_lower_prob(&two, 1, 10, 0.1, 50, &SimConfig::new(1)).unwrap();
        assert_eq!(est.p_hat, 0.0);
        assert_eq!(est.rate_hat, f64::INFINITY);
        assert_eq!(est.zero_upper_bound, Some(3.0 / 50.0));
    }

    #[test]
    fn estimates_are_deterministic() {
        let env = two_point();
        let cfg = SimConfig::new(77);
        let a = estimate_lower_prob_tilted(&env, 1, 12, 0.1, -0.4, 3000, &cfg).unwrap();
        let b = estimate_lower_prob_tilted(&env, 1, 12, 0.1, -0.4, 3000, &cfg).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| estimate_lower_prob_tilted(&env, 1, 12, 0.1, -0.4, 3000, &cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn martingale_trivial_horizon() {
        let env = two_point();
        let m = martingale_check(&env, 1, 0, 1000, &SimConfig::new(1)).unwrap();
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.stderr, 0.0);
    }

    #[test]
    fn rho_preconditions() {
        let env = two_point();
        let cfg = ParticleConfig { horizon: 10, band: 5, particles: 100, chains: 16, seed: 0 };
        assert!(estimate_rho(&env, 1, &cfg).is_err());
        let cfg = ParticleConfig { particles: 1000, ..cfg };
        assert!(estimate_rho(&env, 6, &cfg).is_err());
        assert!(estimate_rho(&env, 1, &cfg).is_ok());
    }

    #[test]
    fn identity_law_has_zero_rho() {
        let env =
            EnvironmentLaw::single(OffspringDistribution::linear_fractional(1.0, 0.0).unwrap()).unwrap();
        let cfg = ParticleConfig { horizon: 20, band: 3, particles: 1000, chains: 4, seed: 1 };
        let est = estimate_rho(&env, 1, &cfg).unwrap();
        assert_eq!(est.rate_hat, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn theta_bound_values() {
        assert_eq!(theta_bound(0.1, 0), 1);
        assert_eq!(theta_bound(1.0, 2), 7);
        assert_eq!(theta_bound(1.0, 100), u64::MAX);
    }
}
