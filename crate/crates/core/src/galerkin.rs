//! Finite-dimensional surrogate of the primitive-equation operators.
//!
//! The state `U = (v, T)` is stored as one coefficient vector, velocity modes
//! first. `A` is diagonal with the eigenvalues of both blocks, `B` is a sparse
//! trilinear tensor antisymmetric in its last two indices, `R` holds a skew
//! Coriolis block plus a temperature-to-velocity coupling, and `Q` forces the
//! temperature block only.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::hilbert_noise::SpectralBasis;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorEntry {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub value: f64,
}

/// Parameters of the built-in model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Shell-convection strength; entries scale as `coupling · √γ_{k+1}`.
    pub coupling: f64,
    /// Coriolis parameter `f`.
    pub coriolis: f64,
    /// Temperature-to-velocity coupling; `R[v_k][T_k] = vt_coupling · √γ_k`.
    pub vt_coupling: f64,
    /// Heat source amplitude: `q_k = q0 / k^2` on temperature mode `k`.
    pub q0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            coupling: 1.0,
            coriolis: 1.0,
            vt_coupling: 0.5,
            q0: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOperators {
    pub velocity: SpectralBasis,
    pub temperature: SpectralBasis,
    gamma: Vec<f64>,
    tensor: Vec<TensorEntry>,
    coriolis: Vec<(usize, usize, f64)>,
    coupling: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
    /// Number of tensor entries the antisymmetrization had to change.
    pub antisymmetrized: usize,
}

/// Make `T_{klm} = -T_{kml}` exact. A lone entry gets its mirrored partner, a
/// mismatched pair is replaced by its antisymmetric part and diagonal entries
/// `l = m` are dropped. Returns the entries and the number of changes.
fn antisymmetrize(entries: &[TensorEntry]) -> (Vec<TensorEntry>, usize) {
    let mut map: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for e in entries {
        *map.entry((e.k, e.l, e.m)).or_insert(0.0) += e.value;
    }
    let mut out = BTreeMap::new();
    let mut changed = 0;
    for (&(k, l, m), &v) in &map {
        if l == m {
            if v != 0.0 {
                changed += 1;
            }
            continue;
        }
        if out.contains_key(&(k, l, m)) {
            continue;
        }
        let partner = map.get(&(k, m, l)).copied();
        let anti = match partner {
            Some(p) if p == -v => v,
            Some(p) => {
                changed += 2;
                0.5 * (v - p)
            }
            None => {
                changed += 1;
                v
            }
        };
        out.insert((k, l, m), anti);
        out.insert((k, m, l), -anti);
    }
    let tensor = out
        .into_iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|((k, l, m), value)| TensorEntry { k, l, m, value })
        .collect();
    (tensor, changed)
}

impl ModelOperators {
    /// Assemble operators from explicit data. `r` is split into its skew part
    /// (the Coriolis block) and the remainder when entries are classified by
    /// the caller; here every entry goes to the coupling part unless listed in
    /// `coriolis`.
    pub fn new(
        velocity: SpectralBasis,
        temperature: SpectralBasis,
        tensor: &[TensorEntry],
        coriolis: Vec<(usize, usize, f64)>,
        coupling: Vec<(usize, usize, f64)>,
        q: Vec<f64>,
    ) -> Result<Self> {
        let nv = velocity.len();
        let dim = nv + temperature.len();
        for e in tensor {
            if e.k >= dim || e.l >= dim || e.m >= dim {
                return Err(invalid(
                    "tensor",
                    format!("entry ({}, {}, {}) out of range", e.k, e.l, e.m),
                ));
            }
            if e.k >= nv {
                return Err(invalid(
                    "tensor",
                    format!("first index {} must be a velocity mode", e.k),
                ));
            }
            if (e.l < nv) != (e.m < nv) {
                return Err(invalid(
                    "tensor",
                    format!(
                        "entry ({}, {}, {}) mixes velocity and temperature in the last two indices",
                        e.k, e.l, e.m
                    ),
                ));
            }
            if !e.value.is_finite() {
                return Err(invalid("tensor", "non-finite entry"));
            }
        }
        for &(i, j, v) in coriolis.iter().chain(&coupling) {
            if i >= dim || j >= dim || !v.is_finite() {
                return Err(invalid("R", format!("entry ({i}, {j}) invalid")));
            }
        }
        for &(i, j, v) in &coriolis {
            if i >= nv || j >= nv {
                return Err(invalid("R", "Coriolis entries act on velocity modes only"));
            }
            if !coriolis.iter().any(|&(a, b, w)| a == j && b == i && w == -v) {
                return Err(invalid(
                    "R",
                    format!("Coriolis entry ({i}, {j}) lacks its skew partner"),
                ));
            }
        }
        if q.len() != dim {
            return Err(invalid("Q", format!("expected {dim} entries, got {}", q.len())));
        }
        if q[..nv].iter().any(|x| *x != 0.0) {
            return Err(invalid("Q", "the heat source acts on the temperature block only"));
        }
        let (tensor, antisymmetrized) = antisymmetrize(tensor);
        if antisymmetrized > 0 {
            log::info!("trilinear tensor: antisymmetrization changed {antisymmetrized} entries");
        }
        let gamma = velocity.gamma.iter().chain(&temperature.gamma).copied().collect();
        Ok(Self {
            velocity,
            temperature,
            gamma,
            tensor,
            coriolis,
            coupling,
            q,
            antisymmetrized,
        })
    }

    /// Nearest-neighbour shell convection: velocity mode `k` couples modes
    /// `k+1, k+2` of both blocks.
    pub fn shell_model(velocity: SpectralBasis, temperature: SpectralBasis, params: &ModelParams) -> Result<Self> {
        let nv = velocity.len();
        let nt = temperature.len();
        let mut tensor = Vec::new();
        for k in 0..nv {
            if k + 2 < nv {
                let c = params.coupling * velocity.gamma[k + 1].sqrt();
                tensor.push(TensorEntry {
                    k,
                    l: k + 1,
                    m: k + 2,
                    value: c,
                });
                tensor.push(TensorEntry {
                    k,
                    l: k + 2,
                    m: k + 1,
                    value: -c,
                });
            }
            if k + 2 < nt {
                let c = params.coupling * temperature.gamma[k + 1].sqrt();
                let (l, m) = (nv + k + 1, nv + k + 2);
                tensor.push(TensorEntry { k, l, m, value: c });
                tensor.push(TensorEntry {
                    k,
                    l: m,
                    m: l,
                    value: -c,
                });
            }
        }
        let mut coriolis = Vec::new();
        if params.coriolis != 0.0 {
            for i in (0..nv.saturating_sub(1)).step_by(2) {
                coriolis.push((i, i + 1, params.coriolis));
                coriolis.push((i + 1, i, -params.coriolis));
            }
        }
        let mut coupling = Vec::new();
        if params.vt_coupling != 0.0 {
            for k in 0..nv.min(nt) {
                coupling.push((k, nv + k, params.vt_coupling * temperature.gamma[k].sqrt()));
            }
        }
        let mut q = vec![0.0; nv + nt];
        for k in 0..nt {
            q[nv + k] = params.q0 / ((k + 1) as f64).powi(2);
        }
        Self::new(velocity, temperature, &tensor, coriolis, coupling, q)
    }

    /// Default bases for both blocks with the default parameters.
    pub fn default_model() -> Self {
        Self::shell_model(
            SpectralBasis::default_for(1),
            SpectralBasis::default_for(2),
            &ModelParams::default(),
        )
        .expect("default model is valid")
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn velocity_modes(&self) -> usize {
        self.velocity.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn tensor(&self) -> &[TensorEntry] {
        &self.tensor
    }

    /// Copy with the trilinear tensor, `R` and/or `Q` switched off.
    pub fn without(&self, tensor: bool, r: bool, q: bool) -> Self {
        let mut out = self.clone();
        if tensor {
            out.tensor.clear();
        }
        if r {
            out.coriolis.clear();
            out.coupling.clear();
        }
        if q {
            out.q.iter_mut().for_each(|x| *x = 0.0);
        }
        out
    }

    /// Copy with the heat source scaled by `c`.
    pub fn with_q_scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.q.iter_mut().for_each(|x| *x *= c);
        out
    }

    pub fn apply_a(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.gamma).map(|(x, g)| g * x).collect()
    }

    /// `B(U, V)_m = Σ T_{klm} u_k v_l`.
    pub fn apply_b(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_b(u, v, 1.0, &mut out);
        out
    }

    /// `out += scale · B(U, V)`.
    pub fn add_b(&self, u: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
        for e in &self.tensor {
            out[e.m] += scale * e.value * u[e.k] * v[e.l];
        }
    }

    /// `b(U, V, W) = ⟨B(U, V), W⟩`.
    pub fn trilinear(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        self.tensor.iter().map(|e| e.value * u[e.k] * v[e.l] * w[e.m]).sum()
    }

    pub fn apply_r(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_r(u, 1.0, &mut out);
        out
    }

    pub fn add_r(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        for &(i, j, v) in self.coriolis.iter().chain(&self.coupling) {
            out[i] += scale * v * u[j];
        }
    }

    /// Coriolis (skew) part of `R` alone.
    pub fn apply_coriolis(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for &(i, j, v) in &self.coriolis {
            out[i] += v * u[j];
        }
        out
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.dim(), self.dim());
        for &(i, j, v) in self.coriolis.iter().chain(&self.coupling) {
            r[(i, j)] += v;
        }
        r
    }

    pub fn norm_l2(&self, u: &[f64]) -> f64 {
        u.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_h1(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.gamma).map(|(x, g)| g * x * x).sum::<f64>().sqrt()
    }

    pub fn norm_a(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(&self.gamma)
            .map(|(x, g)| (g * x).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `νAU + B(U, U) + RU - Q`.
    pub fn stationary_residual(&self, nu: f64, u: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = u
            .iter()
            .zip(&self.gamma)
            .zip(&self.q)
            .map(|((x, g), q)| nu * g * x - q)
            .collect();
        self.add_b(u, u, 1.0, &mut out);
        self.add_r(u, 1.0, &mut out);
        out
    }
}

/// Poincaré constant `λ_1 = γ_min^{-1/2}`.
pub fn poincare_constant(ops: &ModelOperators) -> f64 {
    ops.gamma.iter().copied().fold(f64::INFINITY, f64::min).powf(-0.5)
}

/// `α_0 = ‖R Γ^{-1/2}‖`, the smallest constant with `|⟨RU, W⟩| <= α_0 ‖U‖_1 |W|_2`.
pub fn estimate_alpha0(ops: &ModelOperators) -> f64 {
    let mut r = ops.r_matrix();
    for (j, g) in ops.gamma.iter().enumerate() {
        r.column_mut(j).scale_mut(g.powf(-0.5));
    }
    r.singular_values().iter().copied().fold(0.0, f64::max)
}

/// The three trilinear ratios of the interpolation bounds on `b`:
/// `|b| / (‖U‖_1^{1/2}|AU|^{1/2} ‖V‖_1^{1/2}|AV|^{1/2} ‖W‖_1)`,
/// `|b| / (‖U‖_1^{1/2}|AU|^{1/2} ‖V‖_1 ‖W‖_1^{1/2}|W|^{1/2})` and
/// `|b| / (‖U‖_1 ‖V‖_1^{1/2}|AV|^{1/2} ‖W‖_1^{1/2}|W|^{1/2})`.
pub fn trilinear_ratios(ops: &ModelOperators, u: &[f64], v: &[f64], w: &[f64]) -> [f64; 3] {
    let b = ops.trilinear(u, v, w).abs();
    if b == 0.0 {
        return [0.0; 3];
    }
    let (u1, ua) = (ops.norm_h1(u), ops.norm_a(u));
    let (v1, va) = (ops.norm_h1(v), ops.norm_a(v));
    let (w1, w0) = (ops.norm_h1(w), ops.norm_l2(w));
    let du = (u1 * ua).sqrt();
    let dv = (v1 * va).sqrt();
    let dw = (w1 * w0).sqrt();
    [b / (du * dv * w1), b / (du * v1 * dw), b / (u1 * dv * dw)]
}

fn max_ratio(ops: &ModelOperators, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    trilinear_ratios(ops, u, v, w).into_iter().fold(0.0, f64::max)
}

/// Best ratio over a few analytic choices of `W` for fixed `U`, `V`:
/// `Γ^{-1}B(U,V)` maximises the first ratio exactly.
fn best_over_w(ops: &ModelOperators, u: &[f64], v: &[f64]) -> f64 {
    let b = ops.apply_b(u, v);
    let mut best = 0.0f64;
    for power in [0.0, -0.5, -1.0] {
        let w: Vec<f64> = b.iter().zip(&ops.gamma).map(|(x, g)| x * g.powf(power)).collect();
        best = best.max(max_ratio(ops, u, v, &w));
    }
    best
}

/// Gaussian state over all modes with a random spectral tilt.
pub(crate) fn random_state(rng: &mut ChaCha8Rng, ops: &ModelOperators) -> Vec<f64> {
    let tilt: f64 = rng.random_range(-2.0..0.5);
    (0..ops.dim())
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            z * ops.gamma[i].powf(tilt)
        })
        .collect()
}

/// Random combination of one to three consecutive modes starting at `anchor`.
fn local_state(rng: &mut ChaCha8Rng, dim: usize, anchor: usize) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    let support = rng.random_range(1..=3usize);
    for x in &mut u[anchor..(anchor + support).min(dim)] {
        *x = rng.sample(StandardNormal);
    }
    u
}

/// Pair `(U, V)` for one sample: either two tilted Gaussians or two few-mode
/// states whose supports interact through the tensor (U on velocity modes,
/// V a little further along either block).
pub(crate) fn random_pair(rng: &mut ChaCha8Rng, ops: &ModelOperators) -> (Vec<f64>, Vec<f64>) {
    if rng.random_bool(0.3) {
        return (random_state(rng, ops), random_state(rng, ops));
    }
    let (n, nv) = (ops.dim(), ops.velocity_modes());
    let a = rng.random_range(0..nv);
    let u = local_state(rng, n, a);
    let shift = rng.random_range(0..=2usize);
    let base = if rng.random_bool(0.5) || nv == n { 0 } else { nv };
    let block_end = if base == 0 { nv } else { n };
    let b = (base + a + shift).min(block_end - 1);
    let v = local_state(rng, block_end, b);
    let mut v_full = vec![0.0; n];
    v_full[..block_end].copy_from_slice(&v);
    (u, v_full)
}

/// Empirical constant `ĉ_0` of the trilinear bounds.
///
/// Sample `i` draws `(U, V)` from a stream derived from `(seed, i)`, takes the
/// best analytic `W` and improves `(U, V)` by a short random hill climb on
/// their supports. The
/// result is the running maximum, hence non-decreasing in `samples` for a
/// fixed seed.
pub fn estimate_c0(ops: &ModelOperators, samples: usize, seed: u64) -> f64 {
    if ops.tensor.is_empty() {
        return 0.0;
    }
    const CLIMB_STEPS: usize = 40;
    let mut best = 0.0f64;
    for i in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let (mut u, mut v) = random_pair(&mut rng, ops);
        let mut value = best_over_w(ops, &u, &v);
        for step in 0..CLIMB_STEPS {
            let target = if step % 2 == 0 { &u } else { &v };
            let scale = 0.3 * target.iter().map(|x| x.abs()).fold(0.0, f64::max) * 0.9f64.powi(step as i32 / 2);
            let trial: Vec<f64> = target
                .iter()
                .map(|x| {
                    if *x != 0.0 {
                        x + scale * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    }
                })
                .collect();
            let candidate = if step % 2 == 0 {
                best_over_w(ops, &trial, &v)
            } else {
                best_over_w(ops, &u, &trial)
            };
            if candidate > value {
                value = candidate;
                if step % 2 == 0 {
                    u = trial;
                } else {
                    v = trial;
                }
            }
        }
        best = best.max(value);
    }
    best
}

/// Constants entering the stability hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralConstants {
    pub lambda1: f64,
    pub alpha0: f64,
    pub c0_hat: f64,
}

pub fn structural_constants(ops: &ModelOperators, c0_samples: usize, seed: u64) -> StructuralConstants {
    StructuralConstants {
        lambda1: poincare_constant(ops),
        alpha0: estimate_alpha0(ops),
        c0_hat: estimate_c0(ops, c0_samples, seed),
    }
}

/// Result of [`solve_stationary`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationarySolution {
    pub u_star: Vec<f64>,
    pub residual: f64,
    pub au_star_sq: f64,
    pub iterations: usize,
    pub newton_used: bool,
    /// Reported companion bound `K = (2|Q|_2 / ν)^2`; not asserted.
    pub k_bound: f64,
}

pub const STATIONARY_TOL: f64 = 1e-12;
const DIVERGENCE_STREAK: usize = 10;
const MAX_PICARD: usize = 10_000;

/// Picard iteration `U <- (νA)^{-1}(Q - B(U,U) - RU)` from `init` (zero when
/// `None`), with one Newton attempt if the successive-difference ratio stays
/// at or above one for ten iterations.
pub fn solve_stationary(ops: &ModelOperators, nu: f64, tol: f64, init: Option<&[f64]>) -> Result<StationarySolution> {
    if !(nu.is_finite() && nu > 0.0) {
        return Err(invalid("nu", format!("must be positive, got {nu}")));
    }
    let n = ops.dim();
    let mut u = init.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if u.len() != n {
        return Err(invalid("init", "initial guess has the wrong dimension"));
    }
    let k_bound = (2.0 * ops.norm_l2(&ops.q) / nu).powi(2);
    let finish = |u: Vec<f64>, iterations, newton_used| {
        let residual = ops.norm_l2(&ops.stationary_residual(nu, &u));
        let au_star_sq = ops.norm_a(&u).powi(2);
        StationarySolution {
            u_star: u,
            residual,
            au_star_sq,
            iterations,
            newton_used,
            k_bound,
        }
    };
    let mut ratios = Vec::new();
    let mut streak = 0;
    let mut prev_step = f64::INFINITY;
    for it in 0..MAX_PICARD {
        let res = ops.norm_l2(&ops.stationary_residual(nu, &u));
        if res <= tol {
            return Ok(finish(u, it, false));
        }
        let mut rhs = ops.q.clone();
        ops.add_b(&u, &u, -1.0, &mut rhs);
        ops.add_r(&u, -1.0, &mut rhs);
        let next: Vec<f64> = rhs.iter().zip(&ops.gamma).map(|(r, g)| r / (nu * g)).collect();
        let step = next.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        u = next;
        if !u.iter().all(|x| x.is_finite()) {
            streak = DIVERGENCE_STREAK;
        } else if prev_step.is_finite() && prev_step > 0.0 {
            let ratio = step / prev_step;
            ratios.push(ratio);
            streak = if ratio >= 1.0 { streak + 1 } else { 0 };
        }
        // a step below rounding level cannot shrink further; let the residual decide
        if step == 0.0 {
            break;
        }
        prev_step = step;
        if streak >= DIVERGENCE_STREAK {
            log::warn!("Picard iteration diverging after {} steps; trying Newton", it + 1);
            let start = init.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
            return match newton(ops, nu, tol, start) {
                Some((u, iters)) => Ok(finish(u, it + 1 + iters, true)),
                None => Err(Error::Divergence {
                    iterations: it + 1,
                    ratios: ratios.iter().rev().take(DIVERGENCE_STREAK).rev().copied().collect(),
                }),
            };
        }
    }
    let res = ops.norm_l2(&ops.stationary_residual(nu, &u));
    if res <= tol {
        return Ok(finish(u, MAX_PICARD, false));
    }
    // Picard stalled above tolerance: polish with Newton
    match newton(ops, nu, tol, u) {
        Some((u, iters)) => Ok(finish(u, MAX_PICARD + iters, true)),
        None => Err(Error::Divergence {
            iterations: MAX_PICARD,
            ratios: ratios.iter().rev().take(DIVERGENCE_STREAK).rev().copied().collect(),
        }),
    }
}

fn jacobian(ops: &ModelOperators, nu: f64, u: &[f64]) -> DMatrix<f64> {
    let n = ops.dim();
    let mut j = ops.r_matrix();
    for i in 0..n {
        j[(i, i)] += nu * ops.gamma[i];
    }
    for e in &ops.tensor {
        // ∂/∂u_k and ∂/∂u_l of T_{klm} u_k u_l
        j[(e.m, e.k)] += e.value * u[e.l];
        j[(e.m, e.l)] += e.value * u[e.k];
    }
    j
}

fn newton(ops: &ModelOperators, nu: f64, tol: f64, mut u: Vec<f64>) -> Option<(Vec<f64>, usize)> {
    for it in 0..50 {
        let f = ops.stationary_residual(nu, &u);
        if ops.norm_l2(&f) <= tol {
            return Some((u, it));
        }
        let lu = jacobian(ops, nu, &u).lu();
        let delta = lu.solve(&DVector::from_vec(f))?;
        for (x, d) in u.iter_mut().zip(delta.iter()) {
            *x -= d;
        }
        if !u.iter().all(|x| x.is_finite()) {
            return None;
        }
    }
    let res = ops.norm_l2(&ops.stationary_residual(nu, &u));
    (res <= tol).then_some((u, 50))
}
