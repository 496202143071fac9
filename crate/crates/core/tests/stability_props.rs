use fracstab::galerkin::{solve_stationary, ModelOperators, STATIONARY_TOL};
use fracstab::hilbert_noise::SpectralBasis;
use fracstab::stability::*;
use fracstab::{ForcingEnvelope, GridFunction, TimeGrid};

fn quiet() -> RunConfig {
    RunConfig::default_stability().with_envelopes(ForcingEnvelope::exponential(0.0, 1.0).unwrap())
}

fn short(cfg: RunConfig, horizon: f64, dt: f64) -> RunConfig {
    cfg.with_grid(TimeGrid::with_step(horizon, dt).unwrap())
}

#[test]
fn deterministic_run_decays_monotonically() {
    let mut cfg = short(quiet(), 20.0, 0.01);
    cfg.u0 = (0..cfg.ops.dim())
        .map(|k| if k % 3 == 0 { 1.0 } else { -0.5 })
        .collect();
    let setup = stability_setup(&cfg, 1000).unwrap();
    let noise = simulate_noise(&cfg, 0).unwrap();
    let traj = integrate_transformed(&cfg, &noise, &setup.stationary.u_star).unwrap();
    let err = traj.error_l2();
    let burn = cfg.grid.index_of(1.0);
    assert!(
        err[burn..].windows(2).all(|w| w[1] <= w[0]),
        "error is not monotone after t = 1"
    );
    assert!(err[err.len() - 1] < 1e-10 * err[0]);
}

#[test]
fn linear_control_recovers_mode_rate() {
    let mut cfg = short(quiet(), 5.0, 0.01);
    cfg.ops = cfg.ops.without(true, true, true);
    cfg.u0[0] = 1.0;
    cfg.u0[2] = 0.3;
    let u_star = vec![0.0; cfg.ops.dim()];
    let noise = simulate_noise(&cfg, 0).unwrap();
    let traj = integrate_transformed(&cfg, &noise, &u_star).unwrap();
    let fit = fit_decay(&GridFunction::new(cfg.grid, traj.error_l2()).unwrap(), FIT_WINDOW);
    let expect = -cfg.nu * cfg.ops.gamma()[0];
    assert!((fit.slope / expect - 1.0).abs() < 0.01, "{} vs {expect}", fit.slope);
}

#[test]
fn integrated_residual_is_small() {
    let cfg = short(RunConfig::default_stability(), 5.0, 1e-3);
    let sol = solve_stationary(&cfg.ops, cfg.nu, STATIONARY_TOL, None).unwrap();
    let noise = simulate_noise(&cfg, 3).unwrap();
    let traj = integrate_transformed(&cfg, &noise, &sol.u_star).unwrap();
    let r = integrated_residual(&cfg, &noise, &traj).unwrap();
    assert!(r < 1e-4, "residual {r}");
}

#[test]
fn slope_is_robust_to_step_halving() {
    let fine_cfg = short(RunConfig::default_stability(), 50.0, 0.005);
    let coarse_cfg = short(RunConfig::default_stability(), 50.0, 0.01);
    let setup = stability_setup(&coarse_cfg, 1000).unwrap();
    for seed in 0..2 {
        let fine_noise = simulate_noise(&fine_cfg, seed).unwrap();
        let coarse_noise = fine_noise.coarsen(&coarse_cfg, 2).unwrap();
        let slope = |cfg: &RunConfig, noise: &NoiseRealization| {
            let traj = integrate_transformed(cfg, noise, &setup.stationary.u_star).unwrap();
            report_from_trajectory(cfg, &setup, seed, SLOPE_TOLERANCE, &traj).fitted_slope()
        };
        let (a, b) = (slope(&coarse_cfg, &coarse_noise), slope(&fine_cfg, &fine_noise));
        assert!((a / b - 1.0).abs() < 0.01, "seed {seed}: {a} vs {b}");
    }
}

#[test]
fn default_rate_is_admissible() {
    let cfg = RunConfig::default_stability();
    let setup = stability_setup(&cfg, C0_SAMPLES).unwrap();
    let lambda = setup.rate.lambda.expect("hypothesis holds for the default model");
    let (rho1, _) = cfg.rhos().unwrap();
    assert!(lambda > 0.0 && lambda <= RATE_MARGIN * rho1);
    let c = setup.constants;
    let threshold = c.c0_hat * c.lambda1 * setup.stationary.au_star_sq + c.alpha0 * c.lambda1;
    assert!(cfg.nu > threshold);
}

#[test]
fn degenerate_ensemble_passes() {
    let cfg = short(quiet(), 20.0, 0.01);
    let mut cfg = cfg;
    cfg.u0 = vec![0.2; cfg.ops.dim()];
    let exp = stability_experiment(&cfg, 3, SLOPE_TOLERANCE, 1000).unwrap();
    let lambda = exp.setup.rate.lambda.unwrap();
    for o in &exp.outcomes {
        let r = o.report.as_ref().unwrap();
        assert!(
            r.fit.fully_converged || r.fit.slope <= -lambda / 2.0,
            "seed {}: {}",
            o.seed,
            r.fit.slope
        );
        assert_eq!(r.verdict, Some(true));
    }
    assert_eq!(exp.pass_fraction(), Some(1.0));
}

#[test]
fn weak_dissipation_is_not_applicable() {
    let mut cfg = short(RunConfig::default_stability(), 5.0, 0.01);
    cfg.nu = 2.0;
    let exp = stability_experiment(&cfg, 2, SLOPE_TOLERANCE, 1000).unwrap();
    assert!(!exp.setup.rate.hypothesis_holds);
    assert_eq!(exp.pass_fraction(), None);
    for o in &exp.outcomes {
        if let Ok(r) = &o.report {
            assert_eq!(r.verdict, None);
        }
    }
}

#[test]
fn ergodic_average_settles() {
    let cfg = short(
        RunConfig::default_stability().with_envelopes(ForcingEnvelope::constant(1.0).unwrap()),
        50.0,
        0.01,
    );
    for seed in 0..5 {
        let noise = simulate_noise(&cfg, seed).unwrap();
        let avg = ergodic_average_diagnostic(&noise.z1, &noise.z2).unwrap();
        let (half, end) = (avg.values[cfg.grid.index_of(25.0)], *avg.values.last().unwrap());
        assert!(((end - half) / end).abs() < 0.2, "seed {seed}: {half} -> {end}");
    }
}

#[test]
fn gronwall_holds_on_run_and_synthetic_triples() {
    let cfg = short(RunConfig::default_stability(), 20.0, 0.01);
    let setup = stability_setup(&cfg, 1000).unwrap();
    let noise = simulate_noise(&cfg, 1).unwrap();
    let traj = integrate_transformed(&cfg, &noise, &setup.stationary.u_star).unwrap();
    let (f, g, h) = gronwall_triple(&cfg.ops, &traj);
    assert!(uniform_gronwall_check(&f, &g, &h, 1.0, 0.0).unwrap().holds);
    // f' = g f + h with g = 1/(1+t), h = 1: f = (1+t)(1 + ln(1+t))
    let grid = TimeGrid::new(10.0, 10_001).unwrap();
    let f = GridFunction::from_fn(grid, |t| (1.0 + t) * (1.0 + (1.0 + t).ln()));
    let g = GridFunction::from_fn(grid, |t| 1.0 / (1.0 + t));
    let h = GridFunction::from_fn(grid, |_| 1.0);
    for r in [0.5, 1.0, 2.0] {
        assert!(uniform_gronwall_check(&f, &g, &h, r, 0.0).unwrap().holds);
    }
}

#[test]
fn energy_probe_cases() {
    let mut cfg = short(quiet(), 10.0, 0.01);
    cfg.ops = cfg.ops.without(false, false, true);
    cfg.u0 = vec![0.5; cfg.ops.dim()];
    let probe = uniform_energy_probe(&cfg, &[2.0, 4.0, 8.0]).unwrap();
    assert!(probe.verdict && probe.sups.windows(2).all(|w| w[1] < w[0]));
    assert!(probe.sups[2] < 1e-6 * probe.sups[0]);

    // an anti-damping coupling entry makes the first mode grow like e^{95 t}
    let v = SpectralBasis::new(1, vec![1.0, 2.0], vec![1.0, 0.5], None).unwrap();
    let t = SpectralBasis::new(2, vec![1.0], vec![1.0], None).unwrap();
    let mut cfg = short(RunConfig::default_stability(), 10.0, 0.01);
    cfg.ops = ModelOperators::new(v, t, &[], vec![], vec![(0, 0, -100.0)], vec![0.0; 3]).unwrap();
    cfg.u0 = vec![1.0, 0.0, 0.0];
    let probe = uniform_energy_probe(&cfg, &[2.0, 4.0]).unwrap();
    assert!(!probe.verdict);
    assert!(matches!(probe.failure, Some(fracstab::Error::BlowUp { .. })));
}

#[test]
fn block_bounds_decay_under_exponential_envelopes() {
    let cfg = short(RunConfig::default_stability(), 12.0, 0.01);
    let sol = solve_stationary(&cfg.ops, cfg.nu, STATIONARY_TOL, None).unwrap();
    let noise = simulate_noise(&cfg, 2).unwrap();
    let traj = integrate_transformed(&cfg, &noise, &sol.u_star).unwrap();
    let rows = block_table(&cfg, &noise, &traj).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.c_alpha_block.is_finite() && r.bound_n > 0.0));
    // e^{-ρ j} envelope: the block sum is dominated by a geometric series
    let ratio = rows[11].bound_n / rows[5].bound_n;
    assert!(ratio < 0.5f64.powi(3), "ratio {ratio}");
    let csv = block_table_csv(&rows);
    assert!(csv.starts_with("j,C_alpha_block,bound_J,bound_N\n"));
}

#[test]
fn rerun_is_bitwise_identical() {
    let cfg = short(RunConfig::default_stability(), 5.0, 0.01);
    let setup = stability_setup(&cfg, 100).unwrap();
    let a = stability_run(&cfg, &setup, 7, SLOPE_TOLERANCE).unwrap();
    let b = stability_run(&cfg, &setup, 7, SLOPE_TOLERANCE).unwrap();
    assert_eq!(a.energy_traces, b.energy_traces);
}
