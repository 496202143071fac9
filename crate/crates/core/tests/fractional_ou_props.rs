mod common;

use common::observed_order;
use fracstab::fbm::{polynomial_envelope, sample_fbm, FbmPath, HurstParam};
use fracstab::frac_calc::{stieltjes_integral, FracOrder};
use fracstab::fractional_ou::*;
use fracstab::hilbert_noise::{sample_hilbert_fbm, SpectralBasis};
use fracstab::{GridFunction, TimeGrid};

fn hurst(h: f64) -> HurstParam {
    HurstParam::new(h).unwrap()
}

/// `∫_0^t e^{-(t-s)μ} G(s) dB(s)` evaluated by the generalized Stieltjes integral.
fn stieltjes_mode(mu: f64, env: &ForcingEnvelope, path: &FbmPath) -> f64 {
    let t = path.grid.horizon();
    let l = GridFunction::from_fn(path.grid, |s| (-(t - s) * mu).exp() * env.value(s));
    stieltjes_integral(&l, &path.as_grid_function(), FracOrder::new(0.3).unwrap()).unwrap()
}

#[test]
fn integration_by_parts_matches_stieltjes() {
    // M/(1+ρ) e^{-ρs} with M = 2, ρ = 1 is e^{-s}
    let env = ForcingEnvelope::exponential(2.0, 1.0).unwrap();
    assert_eq!(env.value(0.0), 1.0);
    for seed in 0..5 {
        let p = sample_fbm(hurst(0.75), TimeGrid::with_step(5.0, 1e-3).unwrap(), seed).unwrap();
        let z = ou_mode(1.0, &env, &p).unwrap();
        let direct = stieltjes_mode(1.0, &env, &p);
        let end = *z.values.last().unwrap();
        assert!((end - direct).abs() < 1e-4, "seed {seed}: {end} vs {direct}");
        // the integrand is the constant e^{-T}
        assert!((direct - (-5.0f64).exp() * p.values.last().unwrap()).abs() < 1e-9);
    }
}

#[test]
fn representations_agree_under_refinement() {
    let env = ForcingEnvelope::polynomial(1.0).unwrap();
    let fine = sample_fbm(hurst(0.75), TimeGrid::new(5.0, 8193).unwrap(), 21).unwrap();
    let factors = [16, 8, 4, 2];
    let mut nodes = Vec::new();
    let errs: Vec<f64> = factors
        .iter()
        .map(|f| {
            let p = fine.coarsen(*f).unwrap();
            nodes.push(p.grid.len());
            let z = ou_mode(2.0, &env, &p).unwrap();
            (z.values.last().unwrap() - stieltjes_mode(2.0, &env, &p)).abs()
        })
        .collect();
    let order = observed_order(&nodes, &errs);
    assert!(order >= 1.0, "order {order}, errors {errs:?}");
}

#[test]
fn single_mode_trajectory_is_the_scaled_mode() {
    let basis = SpectralBasis::new(1, vec![3.0], vec![0.25], None).unwrap();
    let env = ForcingEnvelope::exponential(2.0, 0.5).unwrap();
    let noise = sample_hilbert_fbm(&basis, hurst(0.7), TimeGrid::new(4.0, 401).unwrap(), 2).unwrap();
    let traj = simulate_ou(&basis, &env, 1.5, 2.0, &noise).unwrap();
    let z = ou_mode(2.0 * 3.0 + 1.5, &env, &noise.paths[0]).unwrap();
    for (a, b) in traj.modes[0].iter().zip(&z.values) {
        assert_eq!(*a, 0.5 * b);
    }
    for i in 0..traj.grid.len() {
        let want = (3.0f64.powi(3) * traj.modes[0][i].powi(2)).sqrt();
        assert!((traj.sobolev_traces[2][i] - want).abs() <= 1e-12 * (1.0 + want));
    }
}

#[test]
fn default_modes_start_at_zero_and_scale_with_amplitude() {
    let basis = SpectralBasis::default_for(1);
    let noise = sample_hilbert_fbm(&basis, hurst(0.75), TimeGrid::new(5.0, 501).unwrap(), 4).unwrap();
    let a = simulate_ou(&basis, &ForcingEnvelope::polynomial(1.0).unwrap(), 1.0, 1.0, &noise).unwrap();
    let b = simulate_ou(&basis, &ForcingEnvelope::polynomial(2.5).unwrap(), 1.0, 1.0, &noise).unwrap();
    assert!(a.modes.iter().all(|m| m[0] == 0.0));
    for (ma, mb) in a.modes.iter().zip(&b.modes) {
        for (x, y) in ma.iter().zip(mb) {
            assert!((2.5 * x - y).abs() <= 1e-14 * (1.0 + y.abs()));
        }
    }
    let zero = simulate_ou(&basis, &ForcingEnvelope::polynomial(0.0).unwrap(), 1.0, 1.0, &noise).unwrap();
    assert!(zero.sobolev_traces.iter().all(|t| t.iter().all(|v| *v == 0.0)));
    assert_eq!(h3_bound_certificate(&zero, &vec![0.5; basis.len()]).unwrap(), 0.0);
}

#[test]
fn h3_norm_is_uniformly_bounded() {
    let basis = SpectralBasis::default_for(1);
    let grid = TimeGrid::with_step(100.0, 0.1).unwrap();
    let envelopes = [
        ForcingEnvelope::polynomial(1.0).unwrap(),
        ForcingEnvelope::exponential(1.0, 0.5).unwrap(),
    ];
    for seed in 0..20 {
        let noise = sample_hilbert_fbm(&basis, hurst(0.75), grid, seed).unwrap();
        for env in &envelopes {
            let traj = simulate_ou(&basis, env, 1.0, 1.0, &noise).unwrap();
            let (early, late) = (traj.sup_h3(0.0, 50.0), traj.sup_h3(50.0, 100.0));
            assert!(late <= 1.1 * early, "seed {seed} {:?}: {early} -> {late}", env.kind);
        }
    }
}

#[test]
fn certificate_dominates_and_does_not_grow() {
    let basis = SpectralBasis::default_for(1);
    let env = ForcingEnvelope::polynomial(1.0).unwrap();
    let grid = TimeGrid::with_step(40.0, 0.05).unwrap();
    let half = grid.index_of(20.0) + 1;
    for seed in 0..5 {
        let noise = sample_hilbert_fbm(&basis, hurst(0.75), grid, seed).unwrap();
        let short = noise.prefix(half).unwrap();
        let c_long: Vec<f64> = noise.paths.iter().map(polynomial_envelope).collect();
        let c_short: Vec<f64> = short.paths.iter().map(polynomial_envelope).collect();
        let long_traj = simulate_ou(&basis, &env, 1.0, 1.0, &noise).unwrap();
        let short_traj = simulate_ou(&basis, &env, 1.0, 1.0, &short).unwrap();
        let long_cert = h3_bound_certificate(&long_traj, &c_long).unwrap();
        let short_cert = h3_bound_certificate(&short_traj, &c_short).unwrap();
        assert!(long_traj.sup_h3(0.0, 40.0) <= long_cert);
        assert!(short_traj.sup_h3(0.0, 20.0) <= short_cert);
        // t-independent part of the bound: M c Σ √λ_k γ_k^{3/2}
        let c = c_long.iter().copied().fold(1.0, f64::max);
        let steady: f64 = basis
            .lambda
            .iter()
            .zip(&basis.gamma)
            .map(|(l, g)| l.sqrt() * g.powf(1.5))
            .sum::<f64>()
            * env.m
            * c;
        assert!(
            long_cert - short_cert <= steady,
            "seed {seed}: {short_cert} -> {long_cert}"
        );
    }
}

#[test]
fn constant_envelope_certificate_on_single_mode() {
    let basis = SpectralBasis::new(1, vec![2.0], vec![1.0], None).unwrap();
    let env = ForcingEnvelope::constant(1.5).unwrap();
    for seed in 0..20 {
        let noise = sample_hilbert_fbm(&basis, hurst(0.75), TimeGrid::new(8.0, 801).unwrap(), seed).unwrap();
        let traj = simulate_ou(&basis, &env, 1.0, 1.0, &noise).unwrap();
        let c: Vec<f64> = noise.paths.iter().map(polynomial_envelope).collect();
        assert!(
            traj.sup_h3(0.0, 8.0) <= h3_bound_certificate(&traj, &c).unwrap(),
            "seed {seed}"
        );
    }
}
