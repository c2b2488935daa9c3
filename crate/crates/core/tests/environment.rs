mod common;

use bpre_core::{EnvironmentLaw, OffspringDistribution, rng};
use proptest::prelude::*;

fn env_strategy() -> impl Strategy<Value = EnvironmentLaw> {
    prop::collection::vec((0.05f64..1.0, 0.2f64..4.0), 1..5).prop_map(|parts| {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        EnvironmentLaw::from_pairs(
            parts.iter().map(|&(w, m)| (w / total, common::geometric_law(m))),
        )
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cumulant_is_convex(env in env_strategy(), a in -5.0f64..5.0, b in -5.0f64..5.0, t in 0.0f64..1.0) {
        let mid = env.cumulant(t * a + (1.0 - t) * b);
        let chord = t * env.cumulant(a) + (1.0 - t) * env.cumulant(b);
        prop_assert!(mid <= chord + 1e-12 * (1.0 + chord.abs()));
    }

    #[test]
    fn tilts_compose(env in env_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let twice = env.tilt(a).tilt(b);
        let once = env.tilt(a + b);
        for i in 0..env.len() {
            prop_assert!((twice.weight(i) - once.weight(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_mean_is_cumulant_slope(env in env_strategy(), lambda in -3.0f64..3.0) {
        let tilted = env.tilt(lambda);
        prop_assert!((tilted.mean_log_mean() - env.cumulant_derivative(lambda)).abs() < 1e-10);
    }
}

#[test]
fn expectations_match_monte_carlo() {
    let env = common::two_point_env();
    let e = env.expectations();
    let mut rng = rng::stream(21, 0);
    let reps = 1_000_000;
    let mut sums = [0.0; 3];
    for _ in 0..reps {
        let i = env.sample_index(&mut rng);
        let m = env.dist(i).mean();
        sums[0] += m.ln();
        sums[1] += 1.0 / m;
        sums[2] += m.ln() / m;
    }
    let mc: Vec<f64> = sums.iter().map(|s| s / reps as f64).collect();
    assert!((mc[0] - e.mean_log_mean).abs() < 5e-3);
    assert!((mc[1] - e.mean_inverse_mean).abs() < 5e-3);
    assert!((mc[2] - e.mean_log_mean_inverse_mean).abs() < 5e-3);
}

#[test]
fn diagnostics_flag_extinction_and_negative_steps() {
    let d = common::two_point_env().diagnostics();
    assert!(d.is_supercritical);
    assert!((d.prob_x_negative - 1.0 / 3.0).abs() < 1e-12);
    assert!(d.extinction_possible());

    let no_death = EnvironmentLaw::single(OffspringDistribution::finite(vec![0.0, 0.5, 0.5]).unwrap()).unwrap();
    let d = no_death.diagnostics();
    assert!(!d.extinction_possible());
    assert_eq!(d.prob_x_negative, 0.0);
}
