//! Shared fixtures for the benchmarks.

use bpre_core::{EnvironmentLaw, OffspringDistribution};

/// Two geometric laws with means 2 and 0.9, equally likely.
pub fn lf_pair() -> EnvironmentLaw {
    let geo = |m: f64| OffspringDistribution::linear_fractional(m, 2.0 * m * m).unwrap();
    EnvironmentLaw::from_pairs([(0.5, geo(2.0)), (0.5, geo(0.9))]).unwrap()
}

/// Fixed law `{1/4, 1/4, 1/2}`.
pub fn galton_watson() -> EnvironmentLaw {
    EnvironmentLaw::single(OffspringDistribution::finite(vec![0.25, 0.25, 0.5]).unwrap()).unwrap()
}
