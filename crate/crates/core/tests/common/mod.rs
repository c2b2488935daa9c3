//! Test-only oracles: exact annealed transfer matrices and small fixtures.
#![allow(dead_code)]

use bpre_core::{EnvironmentLaw, OffspringDistribution};

pub fn geometric_law(m: f64) -> OffspringDistribution {
    OffspringDistribution::linear_fractional(m, 2.0 * m * m).unwrap()
}

/// `{m = 2 w.p. 2/3, m = 1/2 w.p. 1/3}`.
pub fn two_point_env() -> EnvironmentLaw {
    EnvironmentLaw::from_pairs([(2.0 / 3.0, geometric_law(2.0)), (1.0 / 3.0, geometric_law(0.5))])
        .unwrap()
}

/// `{m = 2 w.p. 1/2, m = 0.9 w.p. 1/2}` with geometric laws.
pub fn lf_pair_env() -> EnvironmentLaw {
    EnvironmentLaw::from_pairs([(0.5, geometric_law(2.0)), (0.5, geometric_law(0.9))]).unwrap()
}

pub fn gw_law() -> OffspringDistribution {
    OffspringDistribution::finite(vec![0.25, 0.25, 0.5]).unwrap()
}

pub fn gw_env() -> EnvironmentLaw {
    EnvironmentLaw::single(gw_law()).unwrap()
}

/// `q^{*z}(j)` for `z, j` in `0..=max`, truncated at `max`.
pub fn convolution_powers(pmf: &[f64], max: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(max + 1);
    let mut cur = vec![0.0; max + 1];
    cur[0] = 1.0;
    rows.push(cur.clone());
    for _ in 1..=max {
        let mut next = vec![0.0; max + 1];
        for (i, &a) in cur.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (k, &b) in pmf.iter().enumerate() {
                if i + k > max {
                    break;
                }
                next[i + k] += a * b;
            }
        }
        rows.push(next.clone());
        cur = next;
    }
    rows
}

/// Truncated pmf of a law on `0..=max`.
pub fn pmf_vec(d: &OffspringDistribution, max: usize) -> Vec<f64> {
    (0..=max as u64).map(|k| d.pmf(k)).collect()
}

/// Distribution of `Z_n` for the annealed chain on `0..=max` (mass leaving
/// the truncation is lost), starting from `z0`.
pub fn annealed_distribution(env: &EnvironmentLaw, z0: usize, n: u32, max: usize) -> Vec<Vec<f64>> {
    let kernels: Vec<(f64, Vec<Vec<f64>>)> = env
        .components()
        .iter()
        .map(|c| (c.weight, convolution_powers(&pmf_vec(&c.dist, max), max)))
        .collect();
    let mut v = vec![0.0; max + 1];
    v[z0] = 1.0;
    let mut history = vec![v.clone()];
    for _ in 0..n {
        let mut next = vec![0.0; max + 1];
        for (w, k) in &kernels {
            for (z, &mass) in v.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                for (j, &p) in k[z].iter().enumerate() {
                    next[j] += w * mass * p;
                }
            }
        }
        history.push(next.clone());
        v = next;
    }
    history
}
