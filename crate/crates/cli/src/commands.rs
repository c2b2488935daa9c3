use bpre_core::rate::{self, LegendreTransform, RateFunction};
use bpre_core::simulator::{self, SimConfig, Weighting};
use bpre_core::{EnvironmentLaw, McEstimate, SurvivalRate};

use crate::config::{EstimateMode, RunConfig};
use crate::output::{num, opt, Table};
use crate::Failure;

fn header(table: &mut Table, command: &str, cfg: &RunConfig) {
    table.meta("tool", concat!("bpre-ld ", env!("CARGO_PKG_VERSION")));
    table.meta("command", command);
    table.meta("seed", cfg.run.seed);
    table.meta("config_sha256", cfg.hash());
}

fn supercritical(env: &EnvironmentLaw) -> Result<LegendreTransform, Failure> {
    LegendreTransform::new(env).map_err(Failure::from_core)
}

fn rho(env: &EnvironmentLaw, cfg: &RunConfig) -> Result<SurvivalRate, Failure> {
    let particles = cfg.particle_config(cfg.run.horizon);
    rate::survival_rate(env, cfg.run.z0, Some(&particles)).map_err(Failure::from_core)
}

fn describe_rho(table: &mut Table, rho: &SurvivalRate) {
    table.meta("rho", num(rho.value));
    table.meta("rho_regime", rho.regime.as_str());
    if let Some(se) = rho.stderr {
        table.meta("rho_stderr", num(se));
    }
}

/// `θ*` from `ρ`, or `E[X]/2` when there is no proper tangent point.
fn default_theta(rho: f64, transform: &LegendreTransform) -> f64 {
    let star = rate::theta_star(rho, transform).value;
    if star > 0.0 {
        0.5 * star
    } else {
        0.5 * transform.mean()
    }
}

pub fn rate_table(cfg: &RunConfig) -> Result<Table, Failure> {
    let env = cfg.environment()?;
    let transform = supercritical(&env)?;
    let rho = rho(&env, cfg)?;
    let star = rate::theta_star(rho.value, &transform);
    let diag = env.diagnostics();

    let mut table = Table::new(&["theta", "Lambda", "lambda_theta", "chi", "t_theta", "regime", "theta_star", "rho"]);
    header(&mut table, "rate", cfg);
    table.meta("mean_log_mean", num(transform.mean()));
    describe_rho(&mut table, &rho);
    table.meta("theta_star", num(star.value));
    table.meta("prob_x_negative", num(diag.prob_x_negative));
    table.meta("extinction_possible", diag.extinction_possible());
    table.meta("lattice", diag.lattice_flag);

    for theta in rate::default_theta_grid(transform.mean(), cfg.run.theta_grid) {
        let (lambda_value, lambda_theta) = transform.lambda_at(theta);
        let chi = rate::chi(theta, rho.value, &transform).map_err(Failure::from_core)?;
        table.row(vec![
            num(theta),
            num(lambda_value),
            num(lambda_theta),
            num(chi.value),
            num(chi.t_theta),
            chi.regime.as_str().into(),
            num(star.value),
            num(rho.value),
        ]);
    }
    Ok(table)
}

fn check_saturation(est: &McEstimate, what: &str) -> Result<(), Failure> {
    if est.reps > 0 && est.saturated == est.reps {
        return Err(Failure::Estimation(format!(
            "every replicate of {what} hit the population cap; raise --cap"
        )));
    }
    Ok(())
}

pub fn estimate_table(cfg: &RunConfig) -> Result<Table, Failure> {
    let env = cfg.environment()?;
    let transform = supercritical(&env)?;
    let rho = rho(&env, cfg)?;
    let r = &cfg.run;

    let mut table = Table::new(&[
        "n", "theta", "method", "p_hat", "stderr", "rate_hat", "ess", "theory_chi", "gap",
    ]);
    header(&mut table, "estimate", cfg);
    table.meta("mode", match r.mode {
        EstimateMode::Lower => "lower",
        EstimateMode::Band => "band",
    });
    table.meta("reps", r.reps);
    table.meta("cap", r.cap);
    describe_rho(&mut table, &rho);

    let mut warnings = Vec::new();
    match r.mode {
        EstimateMode::Lower => {
            let thetas = if r.thetas.is_empty() {
                vec![default_theta(rho.value, &transform)]
            } else {
                r.thetas.clone()
            };
            // one seed for every θ, so the events are nested across rows
            let sim = SimConfig { seed: r.seed, cap: r.cap };
            for &n in &r.horizons {
                for &theta in &thetas {
                    let chi = rate::chi(theta, rho.value, &transform).map_err(Failure::from_core)?.value;
                    let (_, lambda) = transform.lambda_at(theta);
                    let naive = simulator::estimate_lower_prob(&env, r.z0, n, theta, r.reps, &sim);
                    // below min X there is no exponential tilt to use
                    let tilted = lambda.is_finite().then(|| {
                        simulator::estimate_lower_prob_tilted(&env, r.z0, n, theta, lambda, r.reps, &sim)
                    });
                    let tilted_missing = tilted.is_none();
                    if tilted_missing {
                        warnings.push(format!("no tilt for theta={theta} below min log-mean; tilted row left empty"));
                    }
                    for est in std::iter::once(naive).chain(tilted) {
                        let est = est.map_err(Failure::from_core)?;
                        let label = est.weighting.label();
                        check_saturation(&est, &format!("{label} n={n} theta={theta}"))?;
                        if est.warning {
                            warnings.push(format!("low effective sample size at n={n} theta={theta}"));
                        }
                        table.row(vec![
                            n.to_string(),
                            num(theta),
                            label.into(),
                            num(est.p_hat),
                            num(est.stderr),
                            num(est.rate_hat),
                            opt(est.ess),
                            num(chi),
                            num(est.rate_hat - chi),
                        ]);
                    }
                    if tilted_missing {
                        let mut cells = vec![String::new(); 9];
                        cells[0] = n.to_string();
                        cells[1] = num(theta);
                        cells[2] = Weighting::Tilted { lambda }.label().into();
                        cells[7] = num(chi);
                        table.row(cells);
                    }
                }
            }
        }
        EstimateMode::Band => {
            table.meta("band", r.band);
            table.meta("stderr_of", "rate_hat for particle rows");
            for &n in &r.horizons {
                let est = simulator::estimate_rho(&env, r.z0, &cfg.particle_config(n))
                    .map_err(Failure::from_core)?;
                if est.warning {
                    warnings.push(format!("a particle chain died out at n={n}"));
                }
                table.row(vec![
                    n.to_string(),
                    String::new(),
                    Weighting::Particle.label().into(),
                    num(est.p_hat),
                    num(est.stderr),
                    num(est.rate_hat),
                    String::new(),
                    num(rho.value),
                    num(est.rate_hat - rho.value),
                ]);
            }
        }
    }
    for w in warnings {
        eprintln!("warning: {w}");
        table.meta("warning", w);
    }
    Ok(table)
}

pub fn rho_table(cfg: &RunConfig) -> Result<Table, Failure> {
    let env = cfg.environment()?;
    let r = &cfg.run;
    let particles = cfg.particle_config(r.horizon);
    let est = simulator::estimate_rho(&env, r.z0, &particles).map_err(Failure::from_core)?;
    let explicit = rate::survival_rate_explicit(&env, r.z0).map_err(Failure::from_core)?;

    let mut table = Table::new(&[
        "z", "horizon", "band", "particles", "chains", "rate_hat", "stderr", "rho_explicit", "rho_regime",
        "warning",
    ]);
    header(&mut table, "rho", cfg);
    table.row(vec![
        r.z0.to_string(),
        r.horizon.to_string(),
        r.band.to_string(),
        r.particles.to_string(),
        r.chains.to_string(),
        num(est.rate_hat),
        num(est.stderr),
        opt(explicit.map(|s| s.value)),
        explicit.map(|s| s.regime.as_str()).unwrap_or_default().into(),
        est.warning.to_string(),
    ]);
    Ok(table)
}

pub fn kimmel_table(cfg: &RunConfig) -> Result<Table, Failure> {
    let model = cfg
        .kimmel
        .as_ref()
        .ok_or_else(|| Failure::Config("the kimmel command needs a [kimmel] table".into()))?;
    let analysis = model.analyze().map_err(Failure::from_core)?;
    let window = analysis.theta_window().map_err(Failure::from_core)?;
    let log2 = std::f64::consts::LN_2;

    let mut table = Table::new(&["theta", "chi", "log2_minus_chi", "in_window"]);
    header(&mut table, "kimmel", cfg);
    table.meta("parasite_mean", num(model.parasite_mean()));
    table.meta("mean_log_mean", num(analysis.mean));
    table.meta("rho", num(analysis.rho));
    table.meta("theta_star", num(analysis.theta_star));
    table.meta("window_low", num(window.low));
    table.meta("window_high", num(window.high));
    table.meta("window_reaches_zero", window.reaches_zero());

    for theta in rate::default_theta_grid(analysis.mean, cfg.run.theta_grid) {
        let chi = analysis.chi(theta).map_err(Failure::from_core)?.value;
        table.row(vec![num(theta), num(chi), num(log2 - chi), (chi < log2).to_string()]);
    }
    Ok(table)
}

pub fn diagnose_table(cfg: &RunConfig) -> Result<Table, Failure> {
    let env = cfg.environment()?;
    let d = env.diagnostics();
    let mut table = Table::new(&["field", "value"]);
    header(&mut table, "diagnose", cfg);
    let survival_regime = if d.extinction_possible() { "extinction-possible" } else { "no-extinction" };
    let lambda_zero = if d.is_supercritical {
        LegendreTransform::new(&env).map(|t| t.value(0.0)).ok()
    } else {
        None
    };
    let fields: Vec<(&str, String)> = vec![
        ("mean_x", num(d.mean_x)),
        ("is_supercritical", d.is_supercritical.to_string()),
        ("prob_x_negative", num(d.prob_x_negative)),
        ("prob_extinction_one_step", num(d.prob_extinction_possible)),
        ("assumption1_ok", d.assumption1_ok.to_string()),
        ("assumption2_ok", d.assumption2_ok.to_string()),
        ("assumption3_bound", num(d.assumption3_bound)),
        ("lattice_flag", d.lattice_flag.to_string()),
        ("q1_mean", num(d.q1_mean)),
        ("lambda_at_zero", opt(lambda_zero)),
        ("survival_regime", survival_regime.into()),
        ("negative_steps_regime", (d.prob_x_negative > 0.0).to_string()),
    ];
    for (k, v) in fields {
        table.row(vec![k.into(), v]);
    }
    Ok(table)
}
