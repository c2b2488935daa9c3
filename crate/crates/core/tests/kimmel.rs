use bpre_core::kimmel::{KimmelModel, SplittingValue};
use bpre_core::Error;

fn split(values: &[(f64, f64)]) -> Vec<SplittingValue> {
    values.iter().map(|&(weight, p)| SplittingValue { weight, p }).collect()
}

fn model() -> KimmelModel {
    KimmelModel::new(0.1, 0.75, split(&[(0.5, 0.3), (0.5, 0.7)])).unwrap()
}

#[test]
fn induced_laws_are_thinned_geometrics() {
    let m = model();
    for s in m.splitting() {
        let law = m.induced_law(s.p).unwrap();
        assert!((law.mean() - s.p * m.parasite_mean()).abs() < 1e-12);
    }
    assert!((m.parasite_mean() - 3.6).abs() < 1e-12);
}

#[test]
fn mirrored_splitting_gives_the_same_environment() {
    let m = model();
    let env = m.induced_environment().unwrap();
    let x = env.log_means();
    let expected = [(0.3f64 * 3.6).ln(), (0.7f64 * 3.6).ln()];
    for (a, b) in x.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((m.mean_log_mean() - env.mean_log_mean()).abs() < 1e-12);
}

#[test]
fn window_brackets_log_two() {
    let analysis = model().analyze().unwrap();
    let w = analysis.theta_window().unwrap();
    assert!(w.low <= w.high);
    assert!(w.high <= analysis.mean + 1e-12);
    // inside the window χ < ln 2, so the expected count grows
    let mid = 0.5 * (w.low + w.high);
    assert!(w.contains(mid));
    assert!(analysis.chi(mid).unwrap().value < 2f64.ln());
    assert!(analysis.expected_infected(mid, 10).unwrap() > 0.0);
    if w.reaches_zero() {
        assert_eq!(w.low, 0.0);
        assert!(analysis.rho < 2f64.ln());
    }
}

#[test]
fn invalid_models_are_rejected() {
    assert!(matches!(
        KimmelModel::new(0.1, 0.5, split(&[(1.0, 0.3)])),
        Err(Error::InvalidModel(_))
    ));
    assert!(KimmelModel::new(1.5, 0.5, split(&[(1.0, 0.5)])).is_err());
    assert!(KimmelModel::new(0.1, 1.0, split(&[(1.0, 0.5)])).is_err());
    assert!(KimmelModel::new(0.1, 0.5, split(&[(0.5, 0.3), (0.4, 0.7)])).is_err());
    assert!(KimmelModel::new(1.0, 0.0, split(&[(1.0, 0.5)])).is_err());
}

#[test]
fn all_parasites_dying_is_not_supercritical() {
    let m = KimmelModel::new(1.0, 0.5, split(&[(1.0, 0.5)])).unwrap();
    assert!(matches!(m.induced_environment(), Err(Error::NotSupercritical { .. })));
}

#[test]
fn tree_depth_is_limited() {
    let m = model();
    let mut rng = bpre_core::rng::stream(0, 0);
    assert!(bpre_core::kimmel::simulate_tree(&m, 1, 15, 5, &mut rng).is_err());
}
