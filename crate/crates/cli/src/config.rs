//! Run configuration files.
//!
//! ```toml
//! schema_version = 1
//!
//! [[environment.components]]
//! weight = 0.5
//! family = "linear-fractional"
//! m = 2.0
//! b = 8.0
//!
//! [run]
//! seed = 7
//! horizons = [20, 30, 40]
//! ```
//!
//! A `[kimmel]` table (`a`, `q`, `splitting = [{ weight, p }, ...]`) may
//! replace `[environment]`; its induced environment is used instead.

use std::path::Path;

use bpre_core::{EnvironmentLaw, KimmelModel, ParticleConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    /// `P(1 <= Z_n <= e^{θn})`, naive and tilted.
    #[default]
    Lower,
    /// Staying in `{1, ..., band}` up to `n`, particle scheme.
    Band,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub seed: u64,
    pub z0: u64,
    pub theta_grid: usize,
    pub horizons: Vec<u32>,
    /// Estimation thresholds; empty means `θ*/2`.
    pub thetas: Vec<f64>,
    pub mode: EstimateMode,
    pub reps: u64,
    /// Particle horizon for `rho`.
    pub horizon: u32,
    pub band: u64,
    pub particles: usize,
    pub chains: usize,
    pub cap: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            seed: 1,
            z0: 1,
            theta_grid: 256,
            horizons: vec![20, 30, 40],
            thetas: Vec::new(),
            mode: EstimateMode::Lower,
            reps: 100_000,
            horizon: 200,
            band: 50,
            particles: 10_000,
            chains: ParticleConfig::MIN_CHAINS,
            cap: 1_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kimmel: Option<KimmelModel>,
    #[serde(default)]
    pub run: RunParams,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub theta_grid: Option<usize>,
    pub reps: Option<u64>,
    pub horizon: Option<u32>,
    pub band: Option<u64>,
    pub particles: Option<usize>,
    pub cap: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, so formatting and component
    /// order in the source file do not matter.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), Failure> {
        let r = &mut self.run;
        if let Some(v) = o.seed {
            r.seed = v;
        }
        if let Some(v) = o.theta_grid {
            r.theta_grid = v;
        }
        if let Some(v) = o.reps {
            r.reps = v;
        }
        if let Some(v) = o.horizon {
            r.horizon = v;
        }
        if let Some(v) = o.band {
            r.band = v;
        }
        if let Some(v) = o.particles {
            r.particles = v;
        }
        if let Some(v) = o.cap {
            r.cap = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |msg: String| Err(Failure::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.environment.is_none() && self.kimmel.is_none() {
            return bad("config needs an [environment] or a [kimmel] table".into());
        }
        let r = &self.run;
        if r.z0 == 0 {
            return bad("run.z0 must be >= 1".into());
        }
        if r.theta_grid < 2 {
            return bad("run.theta_grid must be >= 2".into());
        }
        if r.reps == 0 {
            return bad("run.reps must be >= 1".into());
        }
        if r.horizons.is_empty() || r.horizons.contains(&0) {
            return bad("run.horizons must be a nonempty list of positive integers".into());
        }
        if let Some(t) = r.thetas.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return bad(format!("run.thetas entries must be positive, got {t}"));
        }
        if r.horizon == 0 {
            return bad("run.horizon must be >= 1".into());
        }
        if r.band < r.z0 {
            return bad(format!("run.band ({}) must be >= run.z0 ({})", r.band, r.z0));
        }
        if r.particles < ParticleConfig::MIN_PARTICLES {
            return bad(format!("run.particles must be >= {}", ParticleConfig::MIN_PARTICLES));
        }
        if r.chains < 2 {
            return bad("run.chains must be >= 2".into());
        }
        if r.cap == 0 {
            return bad("run.cap must be >= 1".into());
        }
        Ok(())
    }

    /// The explicit environment, or the one induced by the Kimmel model.
    pub fn environment(&self) -> Result<EnvironmentLaw, Failure> {
        match (&self.environment, &self.kimmel) {
            (Some(env), _) => Ok(env.clone()),
            (None, Some(model)) => model.induced_environment().map_err(Failure::from_core),
            (None, None) => Err(Failure::Config("no environment configured".into())),
        }
    }

    pub fn particle_config(&self, horizon: u32) -> ParticleConfig {
        ParticleConfig {
            horizon,
            band: self.run.band,
            particles: self.run.particles,
            chains: self.run.chains,
            seed: self.run.seed,
        }
    }
}
