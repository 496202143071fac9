//! Hilbert-space valued fBm `W^H(t) = Σ_k √λ_k e_k B_k^H(t)` truncated to `N`
//! modes, and stochastic integrals of diagonal operator integrands against it.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fbm::{FbmMethod, FbmPath, FbmSampler, HurstParam};
use crate::frac_calc::{stieltjes_integral, FracOrder};
use crate::grid::{GridFunction, TimeGrid};
use crate::seed::mode_seed;

/// Default number of retained modes per component.
pub const DEFAULT_MODES: usize = 64;

/// Eigenvalues `γ_k` of the linear operator and covariance weights `λ_k` of the
/// noise, both indexed by the shared eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    pub component: u8,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `(p, q)` with `λ_k ∝ k^{-p}` and `γ_k ∝ k^q`, when known.
    pub decay: Option<(f64, f64)>,
}

impl SpectralBasis {
    pub fn new(component: u8, gamma: Vec<f64>, lambda: Vec<f64>, decay: Option<(f64, f64)>) -> Result<Self> {
        if component != 1 && component != 2 {
            return Err(invalid("component", format!("expected 1 or 2, got {component}")));
        }
        if gamma.is_empty() || gamma.len() != lambda.len() {
            return Err(invalid(
                "basis",
                format!("gamma has {} entries and lambda {}", gamma.len(), lambda.len()),
            ));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(invalid("gamma", "eigenvalues must be finite and positive"));
        }
        if gamma.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("gamma", "eigenvalues must be non-decreasing"));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(invalid("lambda", "covariance weights must be finite and non-negative"));
        }
        Ok(Self {
            component,
            gamma,
            lambda,
            decay,
        })
    }

    /// `γ_k = gamma_scale · k^q`, `λ_k = lambda_scale · k^{-p}` for `k = 1..=modes`.
    pub fn power_law(component: u8, modes: usize, gamma_scale: f64, q: f64, lambda_scale: f64, p: f64) -> Result<Self> {
        let gamma = (1..=modes).map(|k| gamma_scale * (k as f64).powf(q)).collect();
        let lambda = (1..=modes).map(|k| lambda_scale * (k as f64).powf(-p)).collect();
        Self::new(component, gamma, lambda, Some((p, q)))
    }

    /// `γ_k = k`, `λ_k = k^{-8}` with [`DEFAULT_MODES`] modes.
    pub fn default_for(component: u8) -> Self {
        Self::power_law(component, DEFAULT_MODES, 1.0, 1.0, 1.0, 8.0).expect("default basis is valid")
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn trace(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// Estimate of `Σ_{k>N} λ_k` from the declared decay, extrapolating the last
    /// retained weight: `λ_N N^p ∫_N^∞ x^{-p} dx`. `None` without a declared
    /// exponent or when `p <= 1`.
    pub fn trace_tail(&self) -> Option<f64> {
        let (p, _) = self.decay?;
        if p <= 1.0 {
            return None;
        }
        let n = self.len() as f64;
        let c = self.lambda[self.len() - 1] * n.powf(p);
        Some(c * n.powf(1.0 - p) / (p - 1.0))
    }
}

/// Summability of `Σ_k λ_k^{1/2} γ_k^{5/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayCondition {
    pub partial_sum: f64,
    /// `Some(-p/2 + 5q/2 < -1)` when the decay exponents are declared.
    pub summable: Option<bool>,
}

pub fn eigenvalue_decay_condition(basis: &SpectralBasis) -> DecayCondition {
    let partial_sum = basis
        .gamma
        .iter()
        .zip(&basis.lambda)
        .map(|(g, l)| l.sqrt() * g.powf(2.5))
        .sum();
    let summable = if basis.len() == 1 {
        Some(true)
    } else {
        basis.decay.map(|(p, q)| -p / 2.0 + 2.5 * q < -1.0)
    };
    DecayCondition { partial_sum, summable }
}

/// One realisation of the truncated field: independent scalar fBm per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertFbm {
    pub basis: SpectralBasis,
    pub hurst: HurstParam,
    pub master_seed: u64,
    pub paths: Vec<FbmPath>,
}

impl HilbertFbm {
    pub fn grid(&self) -> TimeGrid {
        self.paths[0].grid
    }

    /// Coefficient `√λ_k B_k^H(t_i)` of mode `k` (0-based).
    pub fn coefficient(&self, k: usize, i: usize) -> f64 {
        self.basis.lambda[k].sqrt() * self.paths[k].values[i]
    }

    /// Restriction of every mode path to every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let paths = self.paths.iter().map(|p| p.coarsen(factor)).collect::<Result<_>>()?;
        Ok(Self { paths, ..self.clone() })
    }

    /// Restriction of every mode path to its first `nodes` nodes.
    pub fn prefix(&self, nodes: usize) -> Result<Self> {
        let paths = self.paths.iter().map(|p| p.prefix(nodes)).collect::<Result<_>>()?;
        Ok(Self { paths, ..self.clone() })
    }

    /// `|W^H(t_i)|^2` in the ambient Hilbert norm.
    pub fn norm_sq(&self, i: usize) -> f64 {
        (0..self.basis.len()).map(|k| self.coefficient(k, i).powi(2)).sum()
    }
}

/// Sample the truncated field. Fails when the declared decay violates the
/// summability condition; use [`sample_hilbert_fbm_unchecked`] to override.
pub fn sample_hilbert_fbm(
    basis: &SpectralBasis,
    hurst: HurstParam,
    grid: TimeGrid,
    master_seed: u64,
) -> Result<HilbertFbm> {
    if eigenvalue_decay_condition(basis).summable == Some(false) {
        return Err(invalid(
            "basis",
            "declared decay does not make Σ λ_k^{1/2} γ_k^{5/2} summable",
        ));
    }
    sample_hilbert_fbm_unchecked(basis, hurst, grid, master_seed)
}

pub fn sample_hilbert_fbm_unchecked(
    basis: &SpectralBasis,
    hurst: HurstParam,
    grid: TimeGrid,
    master_seed: u64,
) -> Result<HilbertFbm> {
    let sampler = FbmSampler::new(hurst, grid, FbmMethod::Auto)?;
    let paths = (0..basis.len())
        .into_par_iter()
        .map(|k| sampler.sample(mode_seed(master_seed, basis.component, k)))
        .collect();
    Ok(HilbertFbm {
        basis: basis.clone(),
        hurst,
        master_seed,
        paths,
    })
}

/// Mode coefficients of `∫_0^T l(s) dW^H(s)` for a diagonal integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorIntegral {
    pub coefficients: Vec<f64>,
    /// Declared-decay estimate of the trace beyond the truncation.
    pub tail_bound: Option<f64>,
}

/// `l[k]` is the scalar integrand acting on mode `k`.
pub fn integrate_operator_integrand(
    l: &[GridFunction],
    noise: &HilbertFbm,
    alpha: FracOrder,
) -> Result<OperatorIntegral> {
    if l.len() != noise.basis.len() {
        return Err(invalid(
            "integrand",
            format!("{} mode integrands for {} noise modes", l.len(), noise.basis.len()),
        ));
    }
    let coefficients = l
        .par_iter()
        .zip(&noise.paths)
        .enumerate()
        .map(|(k, (lk, path))| {
            stieltjes_integral(lk, &path.as_grid_function(), alpha)
                .map(|v| noise.basis.lambda[k].sqrt() * v)
                .map_err(|e| Error::Mode {
                    mode: k,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatorIntegral {
        coefficients,
        tail_bound: noise.basis.trace_tail(),
    })
}
