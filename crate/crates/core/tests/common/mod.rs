#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};

/// Asymptotic Kolmogorov critical value at the 1% level.
pub const KS_CRIT_1PCT: f64 = 1.628;

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let n = a.len() as f64;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    cov / (va * vb).sqrt()
}

/// One-sample KS statistic against `N(0, sd^2)`.
pub fn ks_normal(xs: &[f64], sd: f64) -> f64 {
    let normal = Normal::new(0.0, sd).unwrap();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal.cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Passes when the one-sample statistic is below the 1% critical value
/// (with the usual small-sample correction).
pub fn ks_passes(d: f64, n: usize) -> bool {
    let s = (n as f64).sqrt();
    d * (s + 0.12 + 0.11 / s) < KS_CRIT_1PCT
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

pub fn ks_two_sample_passes(d: f64, n: usize, m: usize) -> bool {
    let (n, m) = (n as f64, m as f64);
    d < KS_CRIT_1PCT * ((n + m) / (n * m)).sqrt()
}

/// Adaptive Simpson quadrature; endpoint singularities are fine as long as
/// the integrand is finite at the sample points.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= (15.0 * tol).max(1e-15 * (left + right).abs()) {
            return left + right + delta / 15.0;
        }
        let t = (tol / 2.0).max(1e-16);
        rec(f, a, m, fa, flm, fm, left, t, depth - 1) + rec(f, m, b, fm, frm, fb, right, t, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

/// Least-squares slope of `log err` against `log n`; the observed order is its negation.
pub fn observed_order(ns: &[usize], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}
