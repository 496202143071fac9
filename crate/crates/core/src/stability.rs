//! Pathwise stability experiments for the Galerkin model driven by fBm.
//!
//! The noise is absorbed into the fractional OU process `Z`, and
//! `u = U - Z` solves the random ODE
//! `du/dt = -νAu - B(u+Z, u+Z) - R(u+Z) + Q + βZ`.
//! It is integrated in deviation form `w = u - U*`: subtracting the
//! stationary equation leaves
//! `dw/dt = -νAw - [B(U*+y) - B(U*)] - Ry + βZ` with `y = w + Z = U - U*`,
//! so the error `U - U*` never suffers cancellation against `U*`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fbm::HurstParam;
use crate::frac_calc::{holder_functional, stieltjes_running, w_alpha1_norm, FracOrder};
use crate::fractional_ou::{simulate_ou, ForcingEnvelope, OuTrajectory};
use crate::galerkin::{
    solve_stationary, structural_constants, ModelOperators, StationarySolution, StructuralConstants, STATIONARY_TOL,
};
use crate::grid::{GridFunction, TimeGrid};
use crate::hilbert_noise::{sample_hilbert_fbm, HilbertFbm};
use crate::seed::ensemble_seed;

/// Local error tolerance of the step-halving check, relative to `|U|`.
pub const LOCAL_TOL: f64 = 1e-6;
/// Blow-up threshold relative to the initial scale.
pub const BLOW_UP_FACTOR: f64 = 1e6;
/// Strict-inequality margin applied to the admissible rate.
pub const RATE_MARGIN: f64 = 0.9;
/// Default slope tolerance as a fraction of the theoretical rate.
pub const SLOPE_TOLERANCE: f64 = 0.1;
/// Default fit window: trailing half of the horizon.
pub const FIT_WINDOW: f64 = 0.5;
const MAX_HALVINGS: u32 = 16;

/// Everything that defines one pathwise run, except the seed-specific noise.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub ops: ModelOperators,
    pub nu: f64,
    /// `(G_1, G_2)` for the velocity and temperature noise.
    pub envelopes: (ForcingEnvelope, ForcingEnvelope),
    pub hurst: HurstParam,
    pub alpha: FracOrder,
    pub beta: f64,
    pub grid: TimeGrid,
    pub seed: u64,
    pub u0: Vec<f64>,
}

impl RunConfig {
    /// Default model and noise with exponential envelopes `ρ = 1`, `T = 50`.
    pub fn default_stability() -> Self {
        let ops = ModelOperators::default_model();
        let dim = ops.dim();
        let env = ForcingEnvelope::exponential(1.0, 1.0).expect("valid envelope");
        Self {
            ops,
            nu: 5.0,
            envelopes: (env, env),
            hurst: HurstParam::new(0.75).expect("valid H"),
            alpha: FracOrder::new(0.3).expect("valid alpha"),
            beta: 1.0,
            grid: TimeGrid::with_step(50.0, 0.01).expect("valid grid"),
            seed: 20_240_101,
            u0: vec![0.0; dim],
        }
    }

    pub fn with_grid(mut self, grid: TimeGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_envelopes(mut self, g: ForcingEnvelope) -> Self {
        self.envelopes = (g, g);
        self
    }

    /// Decay rates `(ρ_1, ρ_2)` of the envelopes; `None` unless both are exponential.
    pub fn rhos(&self) -> Option<(f64, f64)> {
        use crate::fractional_ou::EnvelopeKind::Exponential;
        match (self.envelopes.0.kind, self.envelopes.1.kind) {
            (Exponential { rho: a }, Exponential { rho: b }) => Some((a, b)),
            _ => None,
        }
    }
}

/// One noise realisation and its OU processes for both components.
#[derive(Debug, Clone)]
pub struct NoiseRealization {
    pub w1: HilbertFbm,
    pub w2: HilbertFbm,
    pub z1: OuTrajectory,
    pub z2: OuTrajectory,
}

impl NoiseRealization {
    pub fn grid(&self) -> TimeGrid {
        self.z1.grid
    }

    /// `Z(t_i)` as a full state vector.
    pub fn z(&self, i: usize) -> Vec<f64> {
        let mut z = self.z1.state(i);
        z.extend(self.z2.state(i));
        z
    }

    /// Same fBm realisation on every `factor`-th node, OU recomputed there.
    pub fn coarsen(&self, cfg: &RunConfig, factor: usize) -> Result<Self> {
        noise_from_paths(cfg, self.w1.coarsen(factor)?, self.w2.coarsen(factor)?)
    }
}

pub fn simulate_noise(cfg: &RunConfig, seed: u64) -> Result<NoiseRealization> {
    let w1 = sample_hilbert_fbm(&cfg.ops.velocity, cfg.hurst, cfg.grid, seed)?;
    let w2 = sample_hilbert_fbm(&cfg.ops.temperature, cfg.hurst, cfg.grid, seed)?;
    noise_from_paths(cfg, w1, w2)
}

pub fn noise_from_paths(cfg: &RunConfig, w1: HilbertFbm, w2: HilbertFbm) -> Result<NoiseRealization> {
    let z1 = simulate_ou(&cfg.ops.velocity, &cfg.envelopes.0, cfg.beta, cfg.nu, &w1)?;
    let z2 = simulate_ou(&cfg.ops.temperature, &cfg.envelopes.1, cfg.beta, cfg.nu, &w2)?;
    Ok(NoiseRealization { w1, w2, z1, z2 })
}

/// `U(t_i)` stored as the deviation `U - U*`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub u_star: Vec<f64>,
    pub deviation: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn state(&self, i: usize) -> Vec<f64> {
        self.deviation[i].iter().zip(&self.u_star).map(|(d, s)| d + s).collect()
    }

    pub fn error_l2(&self) -> Vec<f64> {
        self.deviation
            .iter()
            .map(|d| d.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect()
    }

    pub fn error_h1(&self, ops: &ModelOperators) -> Vec<f64> {
        self.deviation.iter().map(|d| ops.norm_h1(d)).collect()
    }

    /// `‖U(t_i)‖_1` at every node.
    pub fn state_h1(&self, ops: &ModelOperators) -> Vec<f64> {
        (0..self.grid.len()).map(|i| ops.norm_h1(&self.state(i))).collect()
    }

    pub fn to_csv(&self, ops: &ModelOperators) -> String {
        error_trace_csv(self.grid, &self.error_l2(), &self.error_h1(ops))
    }
}

/// CSV body `t,|U-Ustar|_2,||U-Ustar||_1,log_err` from the two error traces.
pub fn error_trace_csv(grid: TimeGrid, l2: &[f64], h1: &[f64]) -> String {
    let mut out = String::from("t,|U-Ustar|_2,||U-Ustar||_1,log_err\n");
    for i in 0..grid.len() {
        out.push_str(&format!("{},{},{},{}\n", grid.time(i), l2[i], h1[i], l2[i].ln()));
    }
    out
}

struct Stepper<'a> {
    ops: &'a ModelOperators,
    nu: f64,
    beta: f64,
    u_star: &'a [f64],
    dt: f64,
}

impl Stepper<'_> {
    /// Explicit part `-[B(U*+y) - B(U*)] - Ry + βZ` with `y = w + Z`.
    fn explicit(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = w.iter().zip(z).map(|(a, b)| a + b).collect();
        let mut out: Vec<f64> = z.iter().map(|v| self.beta * v).collect();
        self.ops.add_b(self.u_star, &y, -1.0, &mut out);
        self.ops.add_b(&y, self.u_star, -1.0, &mut out);
        self.ops.add_b(&y, &y, -1.0, &mut out);
        self.ops.add_r(&y, -1.0, &mut out);
        out
    }

    /// One exponential-Euler step: exact on `-νA`, explicit on the rest.
    fn step(&self, w: &[f64], z: &[f64], h: f64) -> Vec<f64> {
        let f = self.explicit(w, z);
        w.iter()
            .zip(&f)
            .zip(self.ops.gamma())
            .map(|((wi, fi), g)| {
                let x = -self.nu * g * h;
                let phi1 = if x.abs() < 1e-12 { 1.0 } else { x.exp_m1() / x };
                x.exp() * wi + h * phi1 * fi
            })
            .collect()
    }

    /// Advance over one grid interval with `Z` linear between `za` and `zb`,
    /// halving the step until one step and two half steps agree to
    /// `LOCAL_TOL · |U|`; the accepted pair is combined by extrapolation.
    fn advance(&self, w: &[f64], za: &[f64], zb: &[f64]) -> Vec<f64> {
        let coarse = self.step(w, za, self.dt);
        self.advance_span(w, coarse, za, zb, 0.0, 1.0, 0)
    }

    #[allow(clippy::too_many_arguments)]
    fn advance_span(
        &self,
        w: &[f64],
        coarse: Vec<f64>,
        za: &[f64],
        zb: &[f64],
        s0: f64,
        s1: f64,
        depth: u32,
    ) -> Vec<f64> {
        let h = self.dt * (s1 - s0);
        let zs = |s: f64| -> Vec<f64> { za.iter().zip(zb).map(|(a, b)| a + s * (b - a)).collect() };
        let sm = 0.5 * (s0 + s1);
        let z0 = zs(s0);
        let zm = zs(sm);
        let half = self.step(w, &z0, 0.5 * h);
        let fine = self.step(&half, &zm, 0.5 * h);
        let diff = fine
            .iter()
            .zip(&coarse)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let z1 = zs(s1);
        let state = fine
            .iter()
            .zip(&z1)
            .zip(self.u_star)
            .map(|((a, b), c)| (a + b + c).powi(2))
            .sum::<f64>()
            .sqrt();
        if diff <= LOCAL_TOL * state || depth >= MAX_HALVINGS {
            if diff > LOCAL_TOL * state {
                log::warn!("step halving limit reached; local error {diff:e}");
            }
            // Richardson extrapolation of the two first-order results
            return fine.iter().zip(&coarse).map(|(f, c)| 2.0 * f - c).collect();
        }
        let mid = self.advance_span(w, half, za, zb, s0, sm, depth + 1);
        let coarse = self.step(&mid, &zm, 0.5 * h);
        self.advance_span(&mid, coarse, za, zb, sm, s1, depth + 1)
    }
}

/// Integrate the transformed system on the noise grid and return `U(t_i)`.
pub fn integrate_transformed(cfg: &RunConfig, noise: &NoiseRealization, u_star: &[f64]) -> Result<Trajectory> {
    let grid = noise.grid();
    let ops = &cfg.ops;
    if cfg.u0.len() != ops.dim() || u_star.len() != ops.dim() {
        return Err(crate::error::invalid("u0", "initial state has the wrong dimension"));
    }
    let stepper = Stepper {
        ops,
        nu: cfg.nu,
        beta: cfg.beta,
        u_star,
        dt: grid.dt(),
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(&cfg.u0).max(norm(u_star)).max(1.0);
    let mut w: Vec<f64> = cfg.u0.iter().zip(u_star).map(|(a, b)| a - b).collect();
    let mut deviation = Vec::with_capacity(grid.len());
    let mut z_prev = noise.z(0);
    deviation.push(w.iter().zip(&z_prev).map(|(a, b)| a + b).collect::<Vec<f64>>());
    let mut history = vec![(0.0, norm(&cfg.u0))];
    for i in 1..grid.len() {
        let z = noise.z(i);
        w = stepper.advance(&w, &z_prev, &z);
        let dev: Vec<f64> = w.iter().zip(&z).map(|(a, b)| a + b).collect();
        let state_norm = norm(&dev.iter().zip(u_star).map(|(a, b)| a + b).collect::<Vec<_>>());
        let t = grid.time(i);
        history.push((t, state_norm));
        if !state_norm.is_finite() || state_norm > BLOW_UP_FACTOR * scale {
            return Err(Error::BlowUp {
                time: t,
                norm: state_norm,
                trace: history,
            });
        }
        deviation.push(dev);
        z_prev = z;
    }
    Ok(Trajectory {
        grid,
        u_star: u_star.to_vec(),
        deviation,
    })
}

/// Candidates and value of the admissible decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBound {
    /// `[ρ_1, ρ_2, 2λ_1^{-2}(ν̄ - c_0λ_1|AU*|^2 - α_0λ_1)]`.
    pub candidates: [f64; 3],
    pub hypothesis_holds: bool,
    /// `0.9 · min(candidates)` when the hypothesis holds.
    pub lambda: Option<f64>,
}

pub fn theoretical_rate(consts: &StructuralConstants, nu_bar: f64, rho1: f64, rho2: f64, au_star_sq: f64) -> RateBound {
    let l1 = consts.lambda1;
    let threshold = consts.c0_hat * l1 * au_star_sq + consts.alpha0 * l1;
    let dissipative = 2.0 / (l1 * l1) * (nu_bar - threshold);
    let hypothesis_holds = nu_bar > threshold;
    let candidates = [rho1, rho2, dissipative];
    let lambda = hypothesis_holds.then(|| RATE_MARGIN * candidates.iter().copied().fold(f64::INFINITY, f64::min));
    RateBound {
        candidates,
        hypothesis_holds,
        lambda,
    }
}

/// Least-squares fit of `log |U - U*|` on the trailing window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// `-∞` when the trace is fully converged.
    pub slope: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// Number of exact zeros replaced by the machine-epsilon floor.
    pub floored: usize,
    pub fully_converged: bool,
}

pub fn fit_decay(trace: &GridFunction, window_fraction: f64) -> DecayFit {
    let grid = trace.grid;
    let t_hi = grid.horizon();
    let t_lo = t_hi * (1.0 - window_fraction.clamp(0.0, 1.0));
    let start = grid.index_of(t_lo).min(grid.len() - 2);
    let mut floored = 0;
    let points: Vec<(f64, f64)> = (start..grid.len())
        .map(|i| {
            let v = trace.values[i].abs();
            let v = if v == 0.0 {
                floored += 1;
                f64::EPSILON
            } else {
                v
            };
            (grid.time(i), v.ln())
        })
        .collect();
    let window = (grid.time(start), t_hi);
    if 2 * floored > points.len() {
        return DecayFit {
            slope: f64::NEG_INFINITY,
            r_squared: 1.0,
            window,
            floored,
            fully_converged: true,
        };
    }
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    DecayFit {
        slope,
        r_squared,
        window,
        floored,
        fully_converged: false,
    }
}

/// Per-seed outcome of the stability experiment.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub seed: u64,
    pub lambda_theory: Option<f64>,
    pub fit: DecayFit,
    /// `|U - U*|_2` and `‖U - U*‖_1` at every node.
    pub energy_traces: (Vec<f64>, Vec<f64>),
    pub hypothesis_check: bool,
    /// `None` when the hypothesis fails ("not applicable").
    pub verdict: Option<bool>,
}

impl StabilityReport {
    pub fn fitted_slope(&self) -> f64 {
        self.fit.slope
    }
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub index: usize,
    pub seed: u64,
    pub report: Result<StabilityReport>,
}

/// Model-level quantities shared by every seed.
#[derive(Debug, Clone)]
pub struct StabilitySetup {
    pub constants: StructuralConstants,
    pub stationary: StationarySolution,
    pub rate: RateBound,
}

#[derive(Debug, Clone)]
pub struct StabilityExperiment {
    pub setup: StabilitySetup,
    pub slope_tolerance: f64,
    pub outcomes: Vec<SeedOutcome>,
}

impl StabilityExperiment {
    /// Fraction of seeds with a passing verdict; `None` when not applicable.
    pub fn pass_fraction(&self) -> Option<f64> {
        self.setup.rate.lambda?;
        let passed = self
            .outcomes
            .iter()
            .filter(|o| matches!(&o.report, Ok(r) if r.verdict == Some(true)))
            .count();
        Some(passed as f64 / self.outcomes.len().max(1) as f64)
    }
}

pub const C0_SAMPLES: usize = 10_000;

/// Stationary solution, structural constants and admissible rate.
pub fn stability_setup(cfg: &RunConfig, c0_samples: usize) -> Result<StabilitySetup> {
    let stationary = solve_stationary(&cfg.ops, cfg.nu, STATIONARY_TOL, None)?;
    let constants = structural_constants(&cfg.ops, c0_samples, cfg.seed);
    let (rho1, rho2) = cfg.rhos().unwrap_or((f64::INFINITY, f64::INFINITY));
    let rate = theoretical_rate(&constants, cfg.nu, rho1, rho2, stationary.au_star_sq);
    Ok(StabilitySetup {
        constants,
        stationary,
        rate,
    })
}

/// Simulate one seed and compare the fitted slope with `-λ/2 + tol·λ`.
pub fn stability_run(
    cfg: &RunConfig,
    setup: &StabilitySetup,
    seed: u64,
    slope_tolerance: f64,
) -> Result<StabilityReport> {
    let noise = simulate_noise(cfg, seed)?;
    let traj = integrate_transformed(cfg, &noise, &setup.stationary.u_star)?;
    Ok(report_from_trajectory(cfg, setup, seed, slope_tolerance, &traj))
}

pub fn report_from_trajectory(
    cfg: &RunConfig,
    setup: &StabilitySetup,
    seed: u64,
    slope_tolerance: f64,
    traj: &Trajectory,
) -> StabilityReport {
    let l2 = traj.error_l2();
    let h1 = traj.error_h1(&cfg.ops);
    let fit = fit_decay(
        &GridFunction {
            grid: traj.grid,
            values: l2.clone(),
        },
        FIT_WINDOW,
    );
    let lambda = setup.rate.lambda;
    let verdict = lambda.map(|l| fit.fully_converged || fit.slope <= -l / 2.0 + slope_tolerance * l);
    StabilityReport {
        seed,
        lambda_theory: lambda,
        fit,
        energy_traces: (l2, h1),
        hypothesis_check: setup.rate.hypothesis_holds,
        verdict,
    }
}

/// Run `ensemble` independent seeds in parallel; outcomes are kept in seed order.
pub fn stability_experiment(
    cfg: &RunConfig,
    ensemble: usize,
    slope_tolerance: f64,
    c0_samples: usize,
) -> Result<StabilityExperiment> {
    Ok(run_ensemble(
        cfg,
        stability_setup(cfg, c0_samples)?,
        ensemble,
        slope_tolerance,
    ))
}

/// [`stability_experiment`] with a precomputed setup.
pub fn run_ensemble(
    cfg: &RunConfig,
    setup: StabilitySetup,
    ensemble: usize,
    slope_tolerance: f64,
) -> StabilityExperiment {
    let outcomes = (0..ensemble)
        .into_par_iter()
        .map(|index| {
            let seed = ensemble_seed(cfg.seed, index);
            SeedOutcome {
                index,
                seed,
                report: stability_run(cfg, &setup, seed, slope_tolerance),
            }
        })
        .collect();
    StabilityExperiment {
        setup,
        slope_tolerance,
        outcomes,
    }
}

/// Running average `(1/t) ∫_0^t (‖Z_1‖_2^2 + ‖Z_1‖_2^4 + ‖Z_2‖_3^2) ds`.
pub fn ergodic_average_diagnostic(z1: &OuTrajectory, z2: &OuTrajectory) -> Result<GridFunction> {
    if z1.grid != z2.grid {
        return Err(Error::GridMismatch("OU trajectories live on different grids".into()));
    }
    let grid = z1.grid;
    let integrand = GridFunction {
        grid,
        values: (0..grid.len())
            .map(|i| {
                let a = z1.sobolev_norm_at(i, 2.0).powi(2);
                a + a * a + z2.sobolev_norm_at(i, 3.0).powi(2)
            })
            .collect(),
    };
    let running = integrand.cumulative_trapezoid();
    let values = running
        .iter()
        .enumerate()
        .map(|(i, c)| if i == 0 { integrand.values[0] } else { c / grid.time(i) })
        .collect();
    Ok(GridFunction { grid, values })
}

/// Sliding-window constants and conclusion of the uniform Gronwall lemma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallCheck {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub holds: bool,
}

pub fn uniform_gronwall_check(
    f: &GridFunction,
    g: &GridFunction,
    h: &GridFunction,
    r: f64,
    t0: f64,
) -> Result<GronwallCheck> {
    let grid = f.grid;
    if g.grid != grid || h.grid != grid {
        return Err(Error::GridMismatch("Gronwall data on different grids".into()));
    }
    let dt = grid.dt();
    let m = (r / dt).round() as usize;
    if m == 0 || ((m as f64) * dt - r).abs() > 1e-9 * r.max(1.0) {
        return Err(crate::error::invalid(
            "r",
            format!("window {r} is not a whole number of steps {dt}"),
        ));
    }
    let i0 = (t0 / dt - 1e-9).ceil().max(0.0) as usize;
    if i0 + m >= grid.len() {
        return Err(crate::error::invalid("r", "window does not fit after t0"));
    }
    for (name, u) in [("f", f), ("g", g), ("h", h)] {
        if u.values[i0..].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(crate::error::invalid(
                "gronwall",
                format!("{name} must be non-negative on [t0, T]"),
            ));
        }
    }
    let window_sup = |u: &GridFunction| {
        let c = u.cumulative_trapezoid();
        (i0..grid.len() - m).map(|i| c[i + m] - c[i]).fold(0.0, f64::max)
    };
    let (a1, a2, a3) = (window_sup(f), window_sup(g), window_sup(h));
    let bound = (a1 / r + a3) * a2.exp();
    let holds = (i0..grid.len() - m).all(|i| f.values[i + m] <= bound * (1.0 + 1e-9));
    Ok(GronwallCheck { a1, a2, a3, holds })
}

/// `(f, g, h) = (‖U‖_1^2, (f'/f)_+, 0)` from a run, with forward differences.
pub fn gronwall_triple(ops: &ModelOperators, traj: &Trajectory) -> (GridFunction, GridFunction, GridFunction) {
    let grid = traj.grid;
    let f: Vec<f64> = traj.state_h1(ops).into_iter().map(|v| v * v).collect();
    let dt = grid.dt();
    let mut g: Vec<f64> = f
        .windows(2)
        .map(|w| {
            if w[0] > 0.0 {
                ((w[1] - w[0]) / (dt * w[0])).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    g.push(*g.last().unwrap_or(&0.0));
    (
        GridFunction { grid, values: f },
        GridFunction { grid, values: g },
        GridFunction::zeros(grid),
    )
}

/// Outcome of the uniform energy probe.
#[derive(Debug, Clone)]
pub struct EnergyProbe {
    pub horizons: Vec<f64>,
    /// `sup ‖U‖_1` over `[T/2, T]` per horizon.
    pub sups: Vec<f64>,
    pub verdict: bool,
    /// Set when the run blew up.
    pub failure: Option<Error>,
}

pub const ENERGY_SLACK: f64 = 0.1;

/// One run to the largest horizon with the grid step of `cfg`, then the
/// supremum of `‖U‖_1` over `[T/2, T]` for each horizon.
pub fn uniform_energy_probe(cfg: &RunConfig, horizons: &[f64]) -> Result<EnergyProbe> {
    let t_max = horizons.iter().copied().fold(0.0, f64::max);
    let grid = TimeGrid::with_step(t_max, cfg.grid.dt())?;
    let run_cfg = cfg.clone().with_grid(grid);
    let stationary = solve_stationary(&cfg.ops, cfg.nu, STATIONARY_TOL, None)?;
    let noise = simulate_noise(&run_cfg, cfg.seed)?;
    let traj = match integrate_transformed(&run_cfg, &noise, &stationary.u_star) {
        Ok(t) => t,
        Err(e @ Error::BlowUp { .. }) => {
            return Ok(EnergyProbe {
                horizons: horizons.to_vec(),
                sups: vec![],
                verdict: false,
                failure: Some(e),
            })
        }
        Err(e) => return Err(e),
    };
    let h1 = traj.state_h1(&cfg.ops);
    let sups: Vec<f64> = horizons
        .iter()
        .map(|&t| {
            let (lo, hi) = (grid.index_of(t / 2.0), grid.index_of(t));
            h1[lo..=hi].iter().copied().fold(0.0, f64::max)
        })
        .collect();
    let verdict = sups.windows(2).all(|w| w[1] <= (1.0 + ENERGY_SLACK) * w[0]);
    Ok(EnergyProbe {
        horizons: horizons.to_vec(),
        sups,
        verdict,
        failure: None,
    })
}

/// Largest deviation, over all nodes, between `U(t) - U(0)` and the integrated
/// equation `∫_0^t (-νAU - B(U) - RU + Q) ds + ∫_0^t G dW^H`, with the noise
/// integral evaluated as a generalized Stieltjes integral mode by mode.
pub fn integrated_residual(cfg: &RunConfig, noise: &NoiseRealization, traj: &Trajectory) -> Result<f64> {
    let ops = &cfg.ops;
    let grid = traj.grid;
    let n = ops.dim();
    let nv = ops.velocity_modes();
    let u_star = &traj.u_star;
    let star_residual = ops.stationary_residual(cfg.nu, u_star);
    // drift at each node in deviation form
    let drift: Vec<Vec<f64>> = traj
        .deviation
        .iter()
        .map(|d| {
            let mut out: Vec<f64> = d
                .iter()
                .zip(ops.gamma())
                .zip(&star_residual)
                .map(|((x, g), r)| -cfg.nu * g * x - r)
                .collect();
            ops.add_b(u_star, d, -1.0, &mut out);
            ops.add_b(d, u_star, -1.0, &mut out);
            ops.add_b(d, d, -1.0, &mut out);
            ops.add_r(d, -1.0, &mut out);
            out
        })
        .collect();
    let mut noise_terms = vec![vec![0.0; grid.len()]; n];
    for (offset, w, g) in [(0, &noise.w1, &cfg.envelopes.0), (nv, &noise.w2, &cfg.envelopes.1)] {
        let env = GridFunction::from_fn(grid, |t| g.value(t));
        for (k, path) in w.paths.iter().enumerate() {
            let running = stieltjes_running(&env, &path.as_grid_function(), cfg.alpha)?;
            let s = w.basis.lambda[k].sqrt();
            noise_terms[offset + k] = running.into_iter().map(|v| s * v).collect();
        }
    }
    let dt = grid.dt();
    let mut integral = vec![0.0; n];
    let mut worst = 0.0f64;
    for i in 1..grid.len() {
        for c in 0..n {
            integral[c] += 0.5 * dt * (drift[i - 1][c] + drift[i][c]);
        }
        let r = (0..n)
            .map(|c| {
                let lhs = traj.deviation[i][c] - traj.deviation[0][c];
                (lhs - integral[c] - noise_terms[c][i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        worst = worst.max(r);
    }
    Ok(worst)
}

/// One row of the unit-interval noise table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRow {
    pub j: usize,
    /// `max_k C_α(B_k)` restricted to `[j-1, j]`.
    pub c_alpha_block: f64,
    /// `Σ_k √λ_k C_α(B_k) ‖G (U - U*)_k‖_{α,1}` on the block.
    pub bound_j: f64,
    /// `Σ_k √λ_k C_α(B_k) ‖G‖_{α,1}` on the block.
    pub bound_n: f64,
}

/// Young-type bounds of the noise pairing over the unit intervals `[j-1, j]`.
pub fn block_table(cfg: &RunConfig, noise: &NoiseRealization, traj: &Trajectory) -> Result<Vec<BlockRow>> {
    let grid = traj.grid;
    let per_unit = (1.0 / grid.dt()).round() as usize;
    if per_unit == 0 || ((per_unit as f64) * grid.dt() - 1.0).abs() > 1e-9 {
        return Err(crate::error::invalid(
            "grid",
            "unit intervals must contain a whole number of steps",
        ));
    }
    let blocks = (grid.len() - 1) / per_unit;
    let nv = cfg.ops.velocity_modes();
    let alpha = cfg.alpha;
    let rows = (1..=blocks)
        .into_par_iter()
        .map(|j| {
            let (a, b) = ((j - 1) * per_unit, j * per_unit);
            let mut row = BlockRow {
                j,
                c_alpha_block: 0.0,
                bound_j: 0.0,
                bound_n: 0.0,
            };
            for (offset, w, g) in [(0, &noise.w1, &cfg.envelopes.0), (nv, &noise.w2, &cfg.envelopes.1)] {
                let env = GridFunction::from_fn(grid, |t| g.value(t)).window(a, b)?;
                let env_norm = w_alpha1_norm(&env, alpha);
                for (k, path) in w.paths.iter().enumerate() {
                    let c = holder_functional(&path.as_grid_function().window(a, b)?, alpha);
                    let s = w.basis.lambda[k].sqrt();
                    let paired = GridFunction {
                        grid: env.grid,
                        values: (a..=b)
                            .map(|i| g.value(grid.time(i)) * traj.deviation[i][offset + k])
                            .collect(),
                    };
                    row.c_alpha_block = row.c_alpha_block.max(c);
                    row.bound_j += s * c * w_alpha1_norm(&paired, alpha);
                    row.bound_n += s * c * env_norm;
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

pub fn block_table_csv(rows: &[BlockRow]) -> String {
    let mut out = String::from("j,C_alpha_block,bound_J,bound_N\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.j, r.c_alpha_block, r.bound_j, r.bound_n));
    }
    out
}
