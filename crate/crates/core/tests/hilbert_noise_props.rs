mod common;

use common::*;
use fracstab::fbm::HurstParam;
use fracstab::frac_calc::FracOrder;
use fracstab::hilbert_noise::*;
use fracstab::{GridFunction, TimeGrid};

fn hurst(h: f64) -> HurstParam {
    HurstParam::new(h).unwrap()
}

fn small_basis() -> SpectralBasis {
    SpectralBasis::new(1, vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 0.5, 0.25, 0.1], None).unwrap()
}

#[test]
fn second_moment_matches_series() {
    let basis = small_basis();
    let h = hurst(0.7);
    let grid = TimeGrid::new(2.0, 17).unwrap();
    let (mid, end) = (8, 16);
    let mut sums = [0.0, 0.0];
    let seeds = 10_000;
    for seed in 0..seeds {
        let w = sample_hilbert_fbm(&basis, h, grid, seed).unwrap();
        sums[0] += w.norm_sq(mid);
        sums[1] += w.norm_sq(end);
    }
    for (node, sum) in [mid, end].into_iter().zip(sums) {
        let expect = grid.time(node).powf(1.4) * basis.trace();
        let got = sum / seeds as f64;
        assert!(
            (got / expect - 1.0).abs() < 0.05,
            "t={}: {got} vs {expect}",
            grid.time(node)
        );
    }
}

#[test]
fn modes_are_independent() {
    let basis = small_basis();
    let grid = TimeGrid::new(1.0, 9).unwrap();
    let mut modes = vec![Vec::new(); basis.len()];
    for seed in 0..10_000 {
        let w = sample_hilbert_fbm(&basis, hurst(0.75), grid, seed).unwrap();
        for (k, m) in modes.iter_mut().enumerate() {
            m.push(w.paths[k].values[8]);
        }
    }
    for a in 0..modes.len() {
        for b in a + 1..modes.len() {
            let r = correlation(&modes[a], &modes[b]);
            assert!(r.abs() < 3.0 / 100.0, "modes {a},{b}: {r}");
        }
    }
}

#[test]
fn zero_covariance_gives_zero_field_and_seeds_differ() {
    let grid = TimeGrid::new(1.0, 33).unwrap();
    let zero = SpectralBasis::new(2, vec![1.0, 2.0], vec![0.0, 0.0], None).unwrap();
    let w = sample_hilbert_fbm(&zero, hurst(0.6), grid, 3).unwrap();
    assert!((0..grid.len()).all(|i| w.norm_sq(i) == 0.0 && w.coefficient(1, i) == 0.0));
    let basis = small_basis();
    let a = sample_hilbert_fbm(&basis, hurst(0.6), grid, 1).unwrap();
    let b = sample_hilbert_fbm(&basis, hurst(0.6), grid, 2).unwrap();
    assert_ne!(a.paths[0].values, b.paths[0].values);
    assert_eq!(a, sample_hilbert_fbm(&basis, hurst(0.6), grid, 1).unwrap());
}

#[test]
fn truncation_error_is_bounded_by_declared_tail() {
    let n = 8;
    let full = SpectralBasis::power_law(1, 2 * n, 1.0, 0.0, 1.0, 3.0).unwrap();
    let head = SpectralBasis::power_law(1, n, 1.0, 0.0, 1.0, 3.0).unwrap();
    let tail = head.trace_tail().unwrap();
    let grid = TimeGrid::new(1.0, 5).unwrap();
    let seeds = 10_000;
    let mut acc = 0.0;
    for seed in 0..seeds {
        let w = sample_hilbert_fbm(&full, hurst(0.75), grid, seed).unwrap();
        acc += (n..2 * n).map(|k| w.coefficient(k, 4).powi(2)).sum::<f64>();
    }
    let mc = acc / seeds as f64;
    assert!(mc / tail > 0.5 && mc / tail < 2.0, "{mc} vs declared {tail}");
}

#[test]
fn operator_integral_examples() {
    let grid = TimeGrid::new(1.0, 4097).unwrap();
    let alpha = FracOrder::new(0.3).unwrap();
    let basis = small_basis();
    let w = sample_hilbert_fbm(&basis, hurst(0.75), grid, 5).unwrap();
    let zero = vec![GridFunction::zeros(grid); basis.len()];
    assert!(integrate_operator_integrand(&zero, &w, alpha)
        .unwrap()
        .coefficients
        .iter()
        .all(|c| *c == 0.0));
    let one = vec![GridFunction::from_fn(grid, |_| 1.0); basis.len()];
    let out = integrate_operator_integrand(&one, &w, alpha).unwrap();
    for k in 0..basis.len() {
        assert!((out.coefficients[k] - w.coefficient(k, grid.len() - 1)).abs() < 1e-9);
    }
    assert!(out.tail_bound.is_none());

    // ∫ e^{-s} dB = e^{-T} B(T) + ∫ e^{-s} B(s) ds
    let single = SpectralBasis::new(1, vec![1.0], vec![1.0], None).unwrap();
    for seed in 0..5 {
        let w = sample_hilbert_fbm(&single, hurst(0.75), grid, seed).unwrap();
        let b = w.paths[0].as_grid_function();
        let l = vec![GridFunction::from_fn(grid, |s| (-s).exp())];
        let got = integrate_operator_integrand(&l, &w, alpha).unwrap().coefficients[0];
        let oracle = (-1.0f64).exp() * b.values[grid.len() - 1] + b.map(|s, v| (-s).exp() * v).trapezoid();
        assert!((got - oracle).abs() < 1e-4, "seed {seed}: {got} vs {oracle}");
    }
}

#[test]
fn operator_integral_is_linear_and_reports_mode() {
    let grid = TimeGrid::new(1.0, 257).unwrap();
    let alpha = FracOrder::new(0.3).unwrap();
    let basis = small_basis();
    let w = sample_hilbert_fbm(&basis, hurst(0.75), grid, 9).unwrap();
    let f: Vec<GridFunction> = (0..4)
        .map(|k| GridFunction::from_fn(grid, move |t| (t * k as f64).cos()))
        .collect();
    let g: Vec<GridFunction> = (0..4)
        .map(|k| GridFunction::from_fn(grid, move |t| t.powi(k + 1)))
        .collect();
    let combo: Vec<GridFunction> = f
        .iter()
        .zip(&g)
        .map(|(a, b)| {
            GridFunction::new(
                grid,
                a.values.iter().zip(&b.values).map(|(x, y)| 2.0 * x - 0.5 * y).collect(),
            )
            .unwrap()
        })
        .collect();
    let (cf, cg, cc) = (
        integrate_operator_integrand(&f, &w, alpha).unwrap().coefficients,
        integrate_operator_integrand(&g, &w, alpha).unwrap().coefficients,
        integrate_operator_integrand(&combo, &w, alpha).unwrap().coefficients,
    );
    for k in 0..4 {
        assert!((cc[k] - (2.0 * cf[k] - 0.5 * cg[k])).abs() < 1e-12);
    }
    let mut bad = f.clone();
    bad[2].values[10] = f64::INFINITY;
    match integrate_operator_integrand(&bad, &w, alpha) {
        Err(fracstab::Error::Mode { mode, .. }) => assert_eq!(mode, 2),
        other => panic!("{other:?}"),
    }
}
