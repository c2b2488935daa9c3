//! Lower large deviations for supercritical branching processes in random
//! environment (BPRE).
//!
//! The crate computes the rate function of the event `{1 <= Z_n <= e^{θn}}`,
//! built from the lower Legendre transform `Λ` of the environment's log-mean
//! and the survival rate `ρ`, and checks it against Monte Carlo estimates:
//!
//! * [`offspring`]: single reproduction laws, generating functions, samplers.
//! * [`environment`]: finite mixtures of reproduction laws, cumulant, tilting.
//! * [`rate`]: `Λ`, `χ`, `θ*`, survival rates and the most probable path.
//! * [`simulator`]: trajectories, naive and tilted estimators, particle `ρ`.
//! * [`kimmel`]: cell division with parasite infection.

pub mod environment;
pub mod error;
pub mod kimmel;
pub mod numeric;
pub mod offspring;
pub mod rate;
pub mod rng;
pub mod simulator;

pub use environment::{Component, EnvironmentDiagnostics, EnvironmentLaw, Expectations};
pub use error::{Error, Result};
pub use kimmel::{KimmelModel, SplittingValue, ThetaWindow};
pub use offspring::{
    FiniteSupport, GeometricParametrization, LinearFractional, Moments, OffspringDistribution,
    Total,
};
pub use rate::{
    ChiRegime, ChiResult, LegendreTransform, RateFunction, RateFunctionTable, RhoRegime,
    SurvivalRate, ThetaStar,
};
pub use simulator::{McEstimate, ParticleConfig, SimConfig, Trajectory, Weighting};
