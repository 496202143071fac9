//! Experiment configuration: a TOML document with `[basis]`, `[noise]`,
//! `[envelopes]`, `[model]`, `[run]` and `[output]` sections. Every key has a
//! default, so an empty file describes the default stability experiment.

use std::path::{Path, PathBuf};

use fracstab::galerkin::{ModelOperators, ModelParams, TensorEntry};
use fracstab::hilbert_noise::{eigenvalue_decay_condition, SpectralBasis, DEFAULT_MODES};
use fracstab::stability::RunConfig;
use fracstab::{EnvelopeKind, ForcingEnvelope, FracOrder, HurstParam, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

/// Spectral data of one component: power-law generators or explicit arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockBasis {
    pub modes: usize,
    pub gamma_scale: f64,
    pub gamma_power: f64,
    pub lambda_scale: f64,
    pub lambda_power: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    /// Declared `(p, q)` for explicit arrays.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<[f64; 2]>,
}

impl Default for BlockBasis {
    fn default() -> Self {
        Self {
            modes: DEFAULT_MODES,
            gamma_scale: 1.0,
            gamma_power: 1.0,
            lambda_scale: 1.0,
            lambda_power: 8.0,
            gamma: None,
            lambda: None,
            decay: None,
        }
    }
}

impl BlockBasis {
    fn build(&self, component: u8) -> fracstab::Result<SpectralBasis> {
        match (&self.gamma, &self.lambda) {
            (None, None) => SpectralBasis::power_law(
                component,
                self.modes,
                self.gamma_scale,
                self.gamma_power,
                self.lambda_scale,
                self.lambda_power,
            ),
            (gamma, lambda) => {
                let n = gamma.as_ref().or(lambda.as_ref()).map_or(0, Vec::len);
                let gamma = gamma.clone().unwrap_or_else(|| {
                    (1..=n)
                        .map(|k| self.gamma_scale * (k as f64).powf(self.gamma_power))
                        .collect()
                });
                let lambda = lambda.clone().unwrap_or_else(|| {
                    (1..=n)
                        .map(|k| self.lambda_scale * (k as f64).powf(-self.lambda_power))
                        .collect()
                });
                SpectralBasis::new(component, gamma, lambda, self.decay.map(|[p, q]| (p, q)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub modes: usize,
    pub gamma_scale: f64,
    pub gamma_power: f64,
    pub lambda_scale: f64,
    pub lambda_power: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay: Option<[f64; 2]>,
    /// Separate temperature basis; the velocity settings are reused when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<BlockBasis>,
}

impl Default for BasisSection {
    fn default() -> Self {
        let b = BlockBasis::default();
        Self {
            modes: b.modes,
            gamma_scale: b.gamma_scale,
            gamma_power: b.gamma_power,
            lambda_scale: b.lambda_scale,
            lambda_power: b.lambda_power,
            gamma: None,
            lambda: None,
            decay: None,
            temperature: None,
        }
    }
}

impl BasisSection {
    pub fn velocity(&self) -> BlockBasis {
        BlockBasis {
            modes: self.modes,
            gamma_scale: self.gamma_scale,
            gamma_power: self.gamma_power,
            lambda_scale: self.lambda_scale,
            lambda_power: self.lambda_power,
            gamma: self.gamma.clone(),
            lambda: self.lambda.clone(),
            decay: self.decay,
        }
    }

    pub fn temperature(&self) -> BlockBasis {
        self.temperature.clone().unwrap_or_else(|| self.velocity())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub hurst: f64,
    pub alpha: f64,
    pub master_seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            hurst: 0.75,
            alpha: 0.3,
            master_seed: 20_240_101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvelopeChoice {
    Polynomial,
    Exponential,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeSection {
    pub kind: EnvelopeChoice,
    pub m: f64,
    pub rho: f64,
    /// Temperature-noise overrides; default to `m` and `rho`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_temperature: Option<f64>,
}

impl Default for EnvelopeSection {
    fn default() -> Self {
        Self {
            kind: EnvelopeChoice::Exponential,
            m: 1.0,
            rho: 1.0,
            m_temperature: None,
            rho_temperature: None,
        }
    }
}

impl EnvelopeSection {
    fn build_one(&self, m: f64, rho: f64) -> fracstab::Result<ForcingEnvelope> {
        let kind = match self.kind {
            EnvelopeChoice::Polynomial => EnvelopeKind::Polynomial,
            EnvelopeChoice::Exponential => EnvelopeKind::Exponential { rho },
            EnvelopeChoice::Constant => EnvelopeKind::Constant,
        };
        ForcingEnvelope::new(kind, m)
    }

    pub fn build(&self) -> fracstab::Result<(ForcingEnvelope, ForcingEnvelope)> {
        Ok((
            self.build_one(self.m, self.rho)?,
            self.build_one(
                self.m_temperature.unwrap_or(self.m),
                self.rho_temperature.unwrap_or(self.rho),
            )?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub nu: f64,
    pub beta: f64,
    /// Coriolis parameter.
    pub f: f64,
    pub coupling: f64,
    pub vt_coupling: f64,
    pub q0: f64,
    /// `"shell"`, `"none"` or a CSV file of `k,l,m,value` rows (0-based state indices).
    pub tensor: String,
    /// `"shell"`, `"none"` or a CSV file of `i,j,value` rows.
    pub r: String,
    /// Explicit heat source over the whole state; temperature block only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            nu: 5.0,
            beta: 1.0,
            f: p.coriolis,
            coupling: p.coupling,
            vt_coupling: p.vt_coupling,
            q0: p.q0,
            tensor: "shell".into(),
            r: "shell".into(),
            q: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub horizon: f64,
    pub dt: f64,
    /// Node count; overrides `dt` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub ensemble: usize,
    pub horizons: Vec<f64>,
    pub c0_samples: usize,
    pub slope_tolerance: f64,
    /// Initial state; zero when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            dt: 0.01,
            n: None,
            ensemble: 20,
            horizons: vec![50.0, 100.0, 200.0],
            c0_samples: fracstab::stability::C0_SAMPLES,
            slope_tolerance: fracstab::stability::SLOPE_TOLERANCE,
            u0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    /// Any of `"csv"` and `"svg"`; CSV is always written.
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: vec!["csv".into(), "svg".into()],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub basis: BasisSection,
    pub noise: NoiseSection,
    pub envelopes: EnvelopeSection,
    pub model: ModelSection,
    pub run: RunSection,
    pub output: OutputSection,
}

/// A parsed configuration together with the directory used to resolve
/// relative file references.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub source: Option<PathBuf>,
}

fn parse_override(assignment: &str) -> Result<(Vec<String>, toml::Value), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::validation(format!("override `{assignment}` is not of the form section.key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::validation(format!("override key `{key}` is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    Ok((path, value))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut here = table;
    for p in parents {
        let entry = here
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        here = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(CliError::validation(format!(
                    "override path `{}` crosses a non-table value",
                    path.join(".")
                )))
            }
        };
    }
    here.insert(last.clone(), value);
    Ok(())
}

impl LoadedConfig {
    /// Parse `text` (or the built-in default) and apply `section.key=value` overrides.
    pub fn from_text(text: &str, source: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::validation(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            apply_override(&mut table, &path, value)?;
        }
        let rendered = toml::to_string(&table).map_err(|e| CliError::validation(e.to_string()))?;
        let config: ExperimentConfig =
            toml::from_str(&rendered).map_err(|e| CliError::validation(format!("invalid config: {e}")))?;
        let base_dir = source
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self {
            config,
            base_dir,
            source: source.map(Path::to_path_buf),
        })
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_text(&text, Some(p), overrides)
            }
            None => Self::from_text(DEFAULT_CONFIG, None, overrides),
        }
    }

    /// Canonical TOML of the effective configuration; this is what gets hashed.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.config).expect("config serializes")
    }

    fn resolve(&self, file: &str) -> PathBuf {
        let p = Path::new(file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn grid(&self) -> fracstab::Result<TimeGrid> {
        let run = &self.config.run;
        match run.n {
            Some(n) => TimeGrid::new(run.horizon, n),
            None => TimeGrid::with_step(run.horizon, run.dt),
        }
    }

    pub fn bases(&self) -> fracstab::Result<(SpectralBasis, SpectralBasis)> {
        Ok((
            self.config.basis.velocity().build(1)?,
            self.config.basis.temperature().build(2)?,
        ))
    }

    fn read_rows(&self, file: &str, width: usize) -> Result<Vec<Vec<f64>>, CliError> {
        let path = self.resolve(file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            match fields {
                Ok(f) if f.len() == width => rows.push(f),
                // a header row
                Err(_) if rows.is_empty() && n == 0 => continue,
                _ => {
                    return Err(CliError::validation(format!(
                        "{}:{}: expected {width} numeric fields",
                        path.display(),
                        n + 1
                    )))
                }
            }
        }
        Ok(rows)
    }

    fn index(value: f64, what: &str) -> Result<usize, CliError> {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(CliError::validation(format!(
                "{what} index {value} is not a non-negative integer"
            )))
        }
    }

    pub fn operators(&self) -> Result<ModelOperators, CliError> {
        let (velocity, temperature) = self.bases().map_err(CliError::from_model_validation)?;
        let m = &self.config.model;
        let params = ModelParams {
            coupling: m.coupling,
            coriolis: m.f,
            vt_coupling: m.vt_coupling,
            q0: m.q0,
        };
        let shell = ModelOperators::shell_model(velocity.clone(), temperature.clone(), &params)
            .map_err(CliError::from_model_validation)?;
        if m.tensor == "shell" && m.r == "shell" && m.q.is_none() {
            return Ok(shell);
        }
        let tensor: Vec<TensorEntry> = match m.tensor.as_str() {
            "shell" => shell.tensor().to_vec(),
            "none" => vec![],
            file => self
                .read_rows(file, 4)?
                .into_iter()
                .map(|r| {
                    Ok(TensorEntry {
                        k: Self::index(r[0], "tensor")?,
                        l: Self::index(r[1], "tensor")?,
                        m: Self::index(r[2], "tensor")?,
                        value: r[3],
                    })
                })
                .collect::<Result<_, CliError>>()?,
        };
        let (coriolis, coupling) = match m.r.as_str() {
            "shell" => {
                let r = shell.r_matrix();
                let nv = velocity.len();
                let mut skew = Vec::new();
                let mut rest = Vec::new();
                for i in 0..r.nrows() {
                    for j in 0..r.ncols() {
                        let v = r[(i, j)];
                        if v == 0.0 {
                            continue;
                        }
                        if i < nv && j < nv {
                            skew.push((i, j, v));
                        } else {
                            rest.push((i, j, v));
                        }
                    }
                }
                (skew, rest)
            }
            "none" => (vec![], vec![]),
            file => {
                let rows = self.read_rows(file, 3)?;
                let entries = rows
                    .into_iter()
                    .map(|r| Ok((Self::index(r[0], "R")?, Self::index(r[1], "R")?, r[2])))
                    .collect::<Result<Vec<_>, CliError>>()?;
                (vec![], entries)
            }
        };
        let q = m.q.clone().unwrap_or_else(|| shell.q().to_vec());
        ModelOperators::new(velocity, temperature, &tensor, coriolis, coupling, q)
            .map_err(CliError::from_model_validation)
    }

    /// Assemble the core run description. Fails with a validation error on any
    /// inadmissible parameter.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let c = &self.config;
        let ops = self.operators()?;
        let hurst = HurstParam::new(c.noise.hurst).map_err(CliError::from_model_validation)?;
        let alpha = FracOrder::new(c.noise.alpha).map_err(CliError::from_model_validation)?;
        let envelopes = c.envelopes.build().map_err(CliError::from_model_validation)?;
        let grid = self.grid().map_err(CliError::from_model_validation)?;
        let u0 = match &c.run.u0 {
            Some(u) if u.len() == ops.dim() => u.clone(),
            Some(u) => {
                return Err(CliError::validation(format!(
                    "run.u0 has {} entries, the state has {}",
                    u.len(),
                    ops.dim()
                )))
            }
            None => vec![0.0; ops.dim()],
        };
        if !(c.model.nu > 0.0 && c.model.beta > 0.0) {
            return Err(CliError::validation("model.nu and model.beta must be positive"));
        }
        Ok(RunConfig {
            ops,
            nu: c.model.nu,
            envelopes,
            hurst,
            alpha,
            beta: c.model.beta,
            grid,
            seed: c.noise.master_seed,
            u0,
        })
    }
}

/// One line of the validation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} ({})",
            self.name,
            if self.passed { "pass" } else { "fail" },
            self.detail
        )
    }
}

/// Run every validator. The stability hypothesis needs the stationary state
/// and `ĉ_0`, so it is only evaluated when `with_hypothesis` is set.
pub fn validate(loaded: &LoadedConfig, with_hypothesis: bool) -> Vec<Check> {
    let c = &loaded.config;
    let mut checks = Vec::new();
    let h = c.noise.hurst;
    checks.push(Check::new(
        "hurst",
        h > 0.5 && h < 1.0,
        format!("H = {h}, required 1/2 < H < 1"),
    ));
    let (lo, hi) = (1.0 - h, 0.5);
    let a = c.noise.alpha;
    checks.push(Check::new(
        "alpha-window",
        a > lo && a < hi,
        format!("alpha = {a}, admissible interval ({lo}, {hi})"),
    ));
    match loaded.bases() {
        Ok((v, t)) => {
            for (label, b) in [("velocity", &v), ("temperature", &t)] {
                let d = eigenvalue_decay_condition(b);
                let verdict = match d.summable {
                    Some(true) => (true, "summable"),
                    Some(false) => (false, "not summable"),
                    None => (true, "unknown: no declared decay exponents"),
                };
                checks.push(Check::new(
                    "decay-condition",
                    verdict.0,
                    format!(
                        "{label}: Σ λ_k^(1/2) γ_k^(5/2) partial sum {:.6e}, {}",
                        d.partial_sum, verdict.1
                    ),
                ));
            }
        }
        Err(e) => checks.push(Check::new("basis", false, e.to_string())),
    }
    match (c.envelopes.build(), loaded.grid()) {
        (Ok((g1, g2)), Ok(grid)) => {
            let ok = g1.satisfies_bound(&grid) && g2.satisfies_bound(&grid);
            checks.push(Check::new(
                "envelope-bound",
                ok,
                format!(
                    "{:?} envelope, |G| + |G'| within its profile on the run grid",
                    c.envelopes.kind
                )
                .to_lowercase(),
            ));
        }
        (Err(e), _) | (_, Err(e)) => checks.push(Check::new("envelope-bound", false, e.to_string())),
    }
    let run = match loaded.run_config() {
        Ok(r) => {
            checks.push(Check::new("model", true, format!("{} modes", r.ops.dim())));
            Some(r)
        }
        Err(e) => {
            checks.push(Check::new("model", false, e.message));
            None
        }
    };
    if with_hypothesis {
        if let Some(run) = run {
            checks.push(hypothesis_check(&run, c.run.c0_samples));
        }
    }
    checks
}

fn hypothesis_check(run: &RunConfig, c0_samples: usize) -> Check {
    if run.rhos().is_none() {
        return Check::new(
            "stability-hypothesis",
            false,
            "stability runs need exponential envelopes",
        );
    }
    match fracstab::stability::stability_setup(run, c0_samples) {
        Ok(s) => {
            let k = s.constants;
            let threshold = k.c0_hat * k.lambda1 * s.stationary.au_star_sq + k.alpha0 * k.lambda1;
            Check::new(
                "stability-hypothesis",
                s.rate.hypothesis_holds,
                format!("nu = {} against threshold {threshold:.6}", run.nu),
            )
        }
        Err(e) => Check::new("stability-hypothesis", false, e.to_string()),
    }
}
