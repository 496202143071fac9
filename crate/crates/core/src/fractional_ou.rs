//! Fractional Ornstein-Uhlenbeck modes `z(t) = ∫_0^t e^{-μ(t-s)} G(s) dB^H(s)`.
//!
//! Integration by parts turns the pathwise integral into
//! `z(t) = G(t) B(t) - ∫_0^t e^{-μ(t-s)} B(s) (μ G(s) + G'(s)) ds`,
//! a Riemann integral against the continuous path. The history integral is
//! accumulated in O(n): the exponential weight is integrated exactly against
//! the piecewise-linear interpolant of `h = B (μG + G')`, so the scheme stays
//! accurate for stiff modes with `μ Δt >> 1`.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::fbm::FbmPath;
use crate::grid::{GridFunction, TimeGrid};
use crate::hilbert_noise::{HilbertFbm, SpectralBasis};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvelopeKind {
    /// `G(t) = (M/3)(1+t)^{-2}`, so `|G| + |G'| <= M (1+t)^{-2}`.
    Polynomial,
    /// `G(t) = M e^{-ρt} / (1+ρ)`, so `|G| + |G'| = M e^{-ρt}`.
    Exponential { rho: f64 },
    /// `G ≡ M`. Not admissible for the decay conditions; used as a
    /// non-vanishing noise source.
    Constant,
}

/// Scalar forcing envelope `G(t)` multiplying the noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingEnvelope {
    pub kind: EnvelopeKind,
    pub m: f64,
}

impl ForcingEnvelope {
    pub fn new(kind: EnvelopeKind, m: f64) -> Result<Self> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(invalid(
                "M",
                format!("envelope amplitude must be finite and >= 0, got {m}"),
            ));
        }
        if let EnvelopeKind::Exponential { rho } = kind {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(invalid("rho", format!("decay rate must be positive, got {rho}")));
            }
        }
        Ok(Self { kind, m })
    }

    pub fn polynomial(m: f64) -> Result<Self> {
        Self::new(EnvelopeKind::Polynomial, m)
    }

    pub fn exponential(m: f64, rho: f64) -> Result<Self> {
        Self::new(EnvelopeKind::Exponential { rho }, m)
    }

    pub fn constant(m: f64) -> Result<Self> {
        Self::new(EnvelopeKind::Constant, m)
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            EnvelopeKind::Polynomial => self.m / 3.0 / (1.0 + t).powi(2),
            EnvelopeKind::Exponential { rho } => self.m / (1.0 + rho) * (-rho * t).exp(),
            EnvelopeKind::Constant => self.m,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self.kind {
            EnvelopeKind::Polynomial => -2.0 * self.m / 3.0 / (1.0 + t).powi(3),
            EnvelopeKind::Exponential { rho } => -rho * self.m / (1.0 + rho) * (-rho * t).exp(),
            EnvelopeKind::Constant => 0.0,
        }
    }

    /// Decay profile `e(t)` of the defining bound `|G| + |G'| <= M e(t)`.
    pub fn profile(&self, t: f64) -> f64 {
        match self.kind {
            EnvelopeKind::Polynomial => (1.0 + t).powi(-2),
            EnvelopeKind::Exponential { rho } => (-rho * t).exp(),
            EnvelopeKind::Constant => 1.0,
        }
    }

    /// Check `|G| + |G'| <= M e(t)` at every node of `grid`.
    pub fn satisfies_bound(&self, grid: &TimeGrid) -> bool {
        grid.times()
            .into_iter()
            .all(|t| self.value(t).abs() + self.derivative(t).abs() <= self.m * self.profile(t) * (1.0 + 1e-12))
    }

    /// `sup_{0<=s<=T} (1+s)^2 e(s)`.
    fn growth_factor(&self, horizon: f64) -> f64 {
        match self.kind {
            EnvelopeKind::Polynomial => 1.0,
            EnvelopeKind::Exponential { rho } => {
                // (1+s)^2 e^{-ρs} peaks at s = 2/ρ - 1
                let s = (2.0 / rho - 1.0).clamp(0.0, horizon);
                (1.0 + s).powi(2) * (-rho * s).exp()
            }
            EnvelopeKind::Constant => (1.0 + horizon).powi(2),
        }
    }
}

/// Exact weights of `∫_0^Δ e^{-μ(Δ-u)} ℓ(u) du = w0 ℓ(0) + w1 ℓ(Δ)` for linear `ℓ`.
fn exponential_weights(mu: f64, dt: f64) -> (f64, f64) {
    let x = mu * dt;
    if x < 1e-3 {
        let w0 = dt * (0.5 - x / 3.0 + x * x / 8.0 - x * x * x / 30.0);
        let w1 = dt * (0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0);
        (w0, w1)
    } else {
        let decay = (-x).exp();
        let phi = -(-x).exp_m1() / x;
        ((phi - decay) / mu, (1.0 - phi) / mu)
    }
}

fn history_integrand(mu: f64, envelope: &ForcingEnvelope, path: &FbmPath) -> Vec<f64> {
    path.values
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let t = path.grid.time(i);
            b * (mu * envelope.value(t) + envelope.derivative(t))
        })
        .collect()
}

/// One fractional OU mode with rate `mu` at every node of the path grid.
pub fn ou_mode(mu: f64, envelope: &ForcingEnvelope, path: &FbmPath) -> Result<GridFunction> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid("mu", format!("rate must be positive, got {mu}")));
    }
    let grid = path.grid;
    let h = history_integrand(mu, envelope, path);
    let (w0, w1) = exponential_weights(mu, grid.dt());
    let decay = (-mu * grid.dt()).exp();
    let mut values = Vec::with_capacity(grid.len());
    values.push(0.0);
    let mut history = 0.0;
    for i in 1..grid.len() {
        history = decay * history + w0 * h[i - 1] + w1 * h[i];
        let t = grid.time(i);
        values.push(envelope.value(t) * path.values[i] - history);
    }
    Ok(GridFunction { grid, values })
}

/// Same scheme as [`ou_mode`] evaluated by direct O(n^2) summation at each node.
pub fn ou_mode_direct(mu: f64, envelope: &ForcingEnvelope, path: &FbmPath) -> Result<GridFunction> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid("mu", format!("rate must be positive, got {mu}")));
    }
    let grid = path.grid;
    let dt = grid.dt();
    let h = history_integrand(mu, envelope, path);
    let (w0, w1) = exponential_weights(mu, dt);
    let mut values = vec![0.0; grid.len()];
    for (i, v) in values.iter_mut().enumerate().skip(1) {
        let history: f64 = (0..i)
            .map(|j| (-mu * (i - j - 1) as f64 * dt).exp() * (w0 * h[j] + w1 * h[j + 1]))
            .sum();
        *v = envelope.value(grid.time(i)) * path.values[i] - history;
    }
    Ok(GridFunction { grid, values })
}

/// Spectral Sobolev norm `‖Z‖_s = (Σ_k γ_k^s z_k^2)^{1/2}`.
pub fn sobolev_norm(gamma: &[f64], coeffs: impl IntoIterator<Item = f64>, s: f64) -> f64 {
    gamma
        .iter()
        .zip(coeffs)
        .map(|(g, z)| g.powf(s) * z * z)
        .sum::<f64>()
        .sqrt()
}

/// All modes of one component of the fractional OU process.
#[derive(Debug, Clone)]
pub struct OuTrajectory {
    pub basis: SpectralBasis,
    pub envelope: ForcingEnvelope,
    pub beta: f64,
    pub nu: f64,
    pub grid: TimeGrid,
    /// `modes[k][i] = z_k(t_i)`.
    pub modes: Vec<Vec<f64>>,
    /// `‖Z(t_i)‖_0`, `‖Z(t_i)‖_1`, `‖Z(t_i)‖_3`.
    pub sobolev_traces: [Vec<f64>; 3],
}

impl OuTrajectory {
    /// Rate of mode `k`: `ν γ_k + β`.
    pub fn rate(&self, k: usize) -> f64 {
        self.nu * self.basis.gamma[k] + self.beta
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        self.modes.iter().map(|m| m[i]).collect()
    }

    pub fn sobolev_norm_at(&self, i: usize, s: f64) -> f64 {
        sobolev_norm(&self.basis.gamma, self.modes.iter().map(|m| m[i]), s)
    }

    /// `sup ‖Z‖_3` over nodes with `t` in `[from, to]`.
    pub fn sup_h3(&self, from: f64, to: f64) -> f64 {
        self.sobolev_traces[2]
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let t = self.grid.time(*i);
                t >= from - 1e-12 && t <= to + 1e-12
            })
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,||Z||_0,||Z||_1,||Z||_3\n");
        for i in 0..self.grid.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.grid.time(i),
                self.sobolev_traces[0][i],
                self.sobolev_traces[1][i],
                self.sobolev_traces[2][i]
            ));
        }
        out
    }
}

/// `z_k = √λ_k · ou_mode(ν γ_k + β, G, B_k)` for every mode of `noise`.
pub fn simulate_ou(
    basis: &SpectralBasis,
    envelope: &ForcingEnvelope,
    beta: f64,
    nu: f64,
    noise: &HilbertFbm,
) -> Result<OuTrajectory> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(invalid("beta", format!("must be positive, got {beta}")));
    }
    if !(nu.is_finite() && nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    if noise.basis.len() != basis.len() {
        return Err(invalid("noise", "noise and basis have different mode counts"));
    }
    let modes = (0..basis.len())
        .into_par_iter()
        .map(|k| {
            let z = ou_mode(nu * basis.gamma[k] + beta, envelope, &noise.paths[k])?;
            let s = basis.lambda[k].sqrt();
            Ok(z.values.into_iter().map(|v| s * v).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let grid = noise.grid();
    let trace = |s: f64| -> Vec<f64> {
        (0..grid.len())
            .map(|i| sobolev_norm(&basis.gamma, modes.iter().map(|m| m[i]), s))
            .collect()
    };
    let sobolev_traces = [trace(0.0), trace(1.0), trace(3.0)];
    Ok(OuTrajectory {
        basis: basis.clone(),
        envelope: *envelope,
        beta,
        nu,
        grid,
        modes,
        sobolev_traces,
    })
}

/// A-priori bound on `sup_{t<=T} ‖Z(t)‖_3` from the path envelopes
/// `|B_k(t)| <= t^2 + c_k` (see [`crate::fbm::polynomial_envelope`]).
///
/// With `c̃ = max(max_k c_k, 1)` one has `|B_k(s)| <= c̃ (1+s)^2`, and both
/// terms of the integration-by-parts formula are bounded mode by mode:
/// `|z_k| <= √λ_k M c̃ K (1 + max(μ_k, 1)(1 - e^{-μ_k T})/μ_k)`, where
/// `K = sup (1+s)^2 e(s)` is 1 for the polynomial envelope. The bound also
/// holds for the discrete scheme, whose history integrand is the
/// piecewise-linear interpolant of nodal values obeying the same estimate.
pub fn h3_bound_certificate(traj: &OuTrajectory, path_envelopes: &[f64]) -> Result<f64> {
    if path_envelopes.len() != traj.basis.len() {
        return Err(invalid("path_envelopes", "one envelope constant per mode is required"));
    }
    let c = path_envelopes.iter().copied().fold(1.0, f64::max);
    let horizon = traj.grid.horizon();
    let scale = traj.envelope.m * c * traj.envelope.growth_factor(horizon);
    let sum: f64 = (0..traj.basis.len())
        .map(|k| {
            let mu = traj.rate(k);
            let memory = mu.max(1.0) * -(-mu * horizon).exp_m1() / mu;
            traj.basis.lambda[k].sqrt() * traj.basis.gamma[k].powf(1.5) * (1.0 + memory)
        })
        .sum();
    Ok(scale * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{polynomial_envelope, sample_fbm, HurstParam};
    use crate::hilbert_noise::sample_hilbert_fbm;

    fn path(h: f64, horizon: f64, n: usize, seed: u64) -> FbmPath {
        sample_fbm(HurstParam::new(h).unwrap(), TimeGrid::new(horizon, n).unwrap(), seed).unwrap()
    }

    #[test]
    fn envelopes_satisfy_their_bounds() {
        let grid = TimeGrid::new(50.0, 5001).unwrap();
        for env in [
            ForcingEnvelope::polynomial(2.0).unwrap(),
            ForcingEnvelope::exponential(2.0, 0.5).unwrap(),
            ForcingEnvelope::constant(2.0).unwrap(),
        ] {
            assert!(env.satisfies_bound(&grid), "{env:?}");
        }
        assert!(ForcingEnvelope::exponential(1.0, 0.0).is_err());
        assert!(ForcingEnvelope::polynomial(-1.0).is_err());
    }

    #[test]
    fn weights_are_continuous_across_series_switch() {
        let (a0, a1) = exponential_weights(1e-3 * (1.0 - 1e-9), 1.0);
        let (b0, b1) = exponential_weights(1e-3, 1.0);
        assert!((a0 - b0).abs() < 1e-12 && (a1 - b1).abs() < 1e-12);
        // μ -> 0 recovers the trapezoid rule
        let (c0, c1) = exponential_weights(1e-12, 0.1);
        assert!((c0 - 0.05).abs() < 1e-12 && (c1 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_envelope_gives_zero_mode() {
        let p = path(0.75, 1.0, 65, 3);
        let z = ou_mode(2.0, &ForcingEnvelope::polynomial(0.0).unwrap(), &p).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn recursion_matches_direct_sum() {
        let p = path(0.7, 5.0, 801, 11);
        let env = ForcingEnvelope::exponential(1.5, 0.7).unwrap();
        for mu in [0.3, 4.0, 300.0] {
            let a = ou_mode(mu, &env, &p).unwrap();
            let b = ou_mode_direct(mu, &env, &p).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn stiff_mode_is_small() {
        let p = path(0.75, 2.0, 1001, 5);
        let env = ForcingEnvelope::constant(1.0).unwrap();
        let mu = 1e3;
        let z = ou_mode(mu, &env, &p).unwrap();
        let bmax = p.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(z.max_abs() < 10.0 * bmax / mu);
        assert_eq!(z.values[0], 0.0);
    }

    #[test]
    fn linear_in_amplitude() {
        let p = path(0.75, 3.0, 301, 8);
        let z1 = ou_mode(1.3, &ForcingEnvelope::polynomial(1.0).unwrap(), &p).unwrap();
        let z3 = ou_mode(1.3, &ForcingEnvelope::polynomial(3.0).unwrap(), &p).unwrap();
        for (a, b) in z1.values.iter().zip(&z3.values) {
            assert!((3.0 * a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn certificate_dominates_single_mode() {
        let basis = SpectralBasis::new(1, vec![1.0], vec![1.0], None).unwrap();
        let env = ForcingEnvelope::polynomial(1.0).unwrap();
        let h = HurstParam::new(0.75).unwrap();
        for seed in 0..10 {
            let noise = sample_hilbert_fbm(&basis, h, TimeGrid::new(10.0, 1001).unwrap(), seed).unwrap();
            let traj = simulate_ou(&basis, &env, 1.0, 1.0, &noise).unwrap();
            let c: Vec<f64> = noise.paths.iter().map(polynomial_envelope).collect();
            let cert = h3_bound_certificate(&traj, &c).unwrap();
            assert!(traj.sup_h3(0.0, 10.0) <= cert, "seed {seed}");
        }
    }
}
