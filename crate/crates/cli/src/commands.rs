use std::fmt::Write as _;

use fracstab::fbm::{polynomial_envelope, sample_fbm};
use fracstab::fractional_ou::h3_bound_certificate;
use fracstab::galerkin::{solve_stationary, structural_constants, STATIONARY_TOL};
use fracstab::seed::ensemble_seed;
use fracstab::stability::*;
use fracstab::{FracOrder, HurstParam, OuTrajectory};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::{Cli, Command};
use crate::config::{validate, Check, LoadedConfig};
use crate::output::OutputDir;
use crate::svg::{line_plot, thin, Series};
use crate::CliError;

const PLOT_POINTS: usize = 2000;

pub fn dispatch(cli: &Cli) -> Result<Vec<String>, CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("noise.master_seed={seed}"));
    }
    let loaded = LoadedConfig::load(cli.config.as_deref(), &overrides)?;
    if let Command::Validate = cli.command {
        return validate_command(&loaded);
    }
    let failed: Vec<String> = validate(&loaded, false)
        .iter()
        .filter(|c| !c.passed)
        .map(Check::line)
        .collect();
    if !failed.is_empty() {
        return Err(CliError::validation(failed.join("\n")));
    }
    let name = cli.command.name();
    let mut out = OutputDir::create(cli.out.as_deref(), &loaded, name)?;
    let result = match &cli.command {
        Command::Validate => unreachable!(),
        Command::Fbm => fbm(&loaded, &mut out),
        Command::Ou => ou(&loaded, &mut out),
        Command::Stationary => stationary(&loaded, &mut out),
        Command::Simulate { residual } => simulate(&loaded, &mut out, *residual),
        Command::Stability { ensemble } => stability(&loaded, &mut out, *ensemble),
        Command::Energy { ensemble } => energy(&loaded, &mut out, *ensemble),
        Command::Sweep {
            param,
            values,
            ensemble,
        } => sweep(&loaded, &mut out, param, values, *ensemble),
    };
    let (mut lines, seeds, verdict) = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = out.write("error.json", &(e.record() + "\n"));
            return Err(e);
        }
    };
    let dir = out.finish(name, &loaded, seeds)?;
    lines.push(format!("outputs: {}", dir.display()));
    match verdict {
        Some(msg) => Err(CliError::verdict(format!("{}\n{msg}", lines.join("\n")))),
        None => Ok(lines),
    }
}

/// Output lines, recorded seeds and an optional verdict-failure message.
type Ran = (Vec<String>, Vec<u64>, Option<String>);

/// Per-seed sweep row: slope, ergodic tail, sup of ‖Z_1‖_3 and verdict.
type SweepRow = (f64, f64, f64, Option<bool>);

fn validate_command(loaded: &LoadedConfig) -> Result<Vec<String>, CliError> {
    let stability_like = loaded.config.envelopes.kind == crate::config::EnvelopeChoice::Exponential;
    let checks = validate(loaded, stability_like);
    let lines: Vec<String> = checks.iter().map(Check::line).collect();
    if checks.iter().all(|c| c.passed) {
        Ok(lines)
    } else {
        Err(CliError::validation(lines.join("\n")))
    }
}

fn fbm(loaded: &LoadedConfig, out: &mut OutputDir) -> Result<Ran, CliError> {
    let c = &loaded.config;
    let seed = c.noise.master_seed;
    let path = sample_fbm(HurstParam::new(c.noise.hurst)?, loaded.grid()?, seed)?;
    out.write("fbm.csv", &path.to_csv())?;
    out.write_svg("fbm.svg", || {
        let pts = path
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (path.grid.time(i), *v))
            .collect();
        line_plot(
            "fBm path",
            "t",
            "B(t)",
            &[Series {
                label: "B",
                points: thin(pts, PLOT_POINTS),
            }],
            false,
        )
    })?;
    let env = polynomial_envelope(&path);
    out.write_json(
        "fbm_report.json",
        &json!({ "seed": seed, "hurst": c.noise.hurst, "nodes": path.grid.len(), "envelope_constant": env }),
    )?;
    Ok((
        vec![format!("fbm: {} nodes, envelope constant {env:.6}", path.grid.len())],
        vec![seed],
        None,
    ))
}

fn trace_series(traj: &OuTrajectory, s: usize) -> Vec<(f64, f64)> {
    let pts = traj.sobolev_traces[s]
        .iter()
        .enumerate()
        .map(|(i, v)| (traj.grid.time(i), *v))
        .collect();
    thin(pts, PLOT_POINTS)
}

fn ou(loaded: &LoadedConfig, out: &mut OutputDir) -> Result<Ran, CliError> {
    let run = loaded.run_config()?;
    let seed = run.seed;
    let noise = simulate_noise(&run, seed)?;
    let mut report = serde_json::Map::new();
    let mut lines = Vec::new();
    for (label, traj, w) in [
        ("velocity", &noise.z1, &noise.w1),
        ("temperature", &noise.z2, &noise.w2),
    ] {
        out.write(&format!("ou_{label}.csv"), &traj.to_csv())?;
        let c: Vec<f64> = w.paths.iter().map(polynomial_envelope).collect();
        let cert = h3_bound_certificate(traj, &c)?;
        let horizon = traj.grid.horizon();
        let sup = traj.sup_h3(0.0, horizon);
        report.insert(
            label.into(),
            json!({
                "sup_h3": sup,
                "sup_h3_first_half": traj.sup_h3(0.0, horizon / 2.0),
                "sup_h3_second_half": traj.sup_h3(horizon / 2.0, horizon),
                "h3_certificate": cert,
                "certificate_holds": sup <= cert,
            }),
        );
        lines.push(format!("ou {label}: sup ||Z||_3 = {sup:.6e}, certificate {cert:.6e}"));
    }
    out.write_json("ou_report.json", &report)?;
    out.write_svg("ou.svg", || {
        line_plot(
            "O-U processes",
            "t",
            "||Z(t)||_3",
            &[
                Series {
                    label: "Z1",
                    points: trace_series(&noise.z1, 2),
                },
                Series {
                    label: "Z2",
                    points: trace_series(&noise.z2, 2),
                },
            ],
            false,
        )
    })?;
    Ok((lines, vec![seed], None))
}

fn stationary(loaded: &LoadedConfig, out: &mut OutputDir) -> Result<Ran, CliError> {
    let run = loaded.run_config()?;
    let ops = &run.ops;
    let sol = solve_stationary(ops, run.nu, STATIONARY_TOL, None)?;
    let consts = structural_constants(ops, loaded.config.run.c0_samples, run.seed);
    let nv = ops.velocity_modes();
    let mut csv = String::from("index,block,mode,gamma,q,u_star\n");
    for (i, u) in sol.u_star.iter().enumerate() {
        let (block, mode) = if i < nv {
            ("velocity", i + 1)
        } else {
            ("temperature", i + 1 - nv)
        };
        let _ = writeln!(csv, "{i},{block},{mode},{},{},{u}", ops.gamma()[i], ops.q()[i]);
    }
    out.write("stationary.csv", &csv)?;
    let rate = run
        .rhos()
        .map(|(r1, r2)| theoretical_rate(&consts, run.nu, r1, r2, sol.au_star_sq));
    out.write_json(
        "stationary_report.json",
        &json!({
            "residual": sol.residual,
            "au_star_sq": sol.au_star_sq,
            "iterations": sol.iterations,
            "newton_used": sol.newton_used,
            "k_bound": sol.k_bound,
            "lambda1": consts.lambda1,
            "alpha0": consts.alpha0,
            "c0_hat": consts.c0_hat,
            "tensor_entries_antisymmetrized": ops.antisymmetrized,
            "rate_candidates": rate.map(|r| r.candidates),
            "hypothesis_holds": rate.map(|r| r.hypothesis_holds),
        }),
    )?;
    Ok((
        vec![format!(
            "stationary: residual {:.3e}, |AU*|^2 = {:.6}, {} iterations{}",
            sol.residual,
            sol.au_star_sq,
            sol.iterations,
            if sol.newton_used { " (Newton)" } else { "" }
        )],
        vec![run.seed],
        None,
    ))
}

#[derive(Serialize)]
struct FitJson {
    slope: f64,
    r_squared: f64,
    window: (f64, f64),
    fully_converged: bool,
    floored: usize,
}

impl From<&DecayFit> for FitJson {
    fn from(f: &DecayFit) -> Self {
        Self {
            slope: f.slope,
            r_squared: f.r_squared,
            window: f.window,
            fully_converged: f.fully_converged,
            floored: f.floored,
        }
    }
}

fn setup_json(setup: &StabilitySetup) -> serde_json::Value {
    json!({
        "lambda1": setup.constants.lambda1,
        "alpha0": setup.constants.alpha0,
        "c0_hat": setup.constants.c0_hat,
        "au_star_sq": setup.stationary.au_star_sq,
        "stationary_residual": setup.stationary.residual,
        "rate_candidates": setup.rate.candidates,
        "hypothesis_holds": setup.rate.hypothesis_holds,
        "lambda_theory": setup.rate.lambda,
    })
}

fn error_plot(grid: fracstab::TimeGrid, traces: &[(String, &[f64])]) -> String {
    let series: Vec<Series> = traces
        .iter()
        .map(|(label, t)| Series {
            label,
            points: thin(
                t.iter().enumerate().map(|(i, v)| (grid.time(i), *v)).collect(),
                PLOT_POINTS,
            ),
        })
        .collect();
    line_plot("distance to the stationary state", "t", "|U - U*|_2", &series, true)
}

fn simulate(loaded: &LoadedConfig, out: &mut OutputDir, residual: bool) -> Result<Ran, CliError> {
    let run = loaded.run_config()?;
    let c = &loaded.config;
    let setup = stability_setup(&run, c.run.c0_samples)?;
    let seed = run.seed;
    let noise = simulate_noise(&run, seed)?;
    let traj = integrate_transformed(&run, &noise, &setup.stationary.u_star)?;
    let report = report_from_trajectory(&run, &setup, seed, c.run.slope_tolerance, &traj);
    out.write("trajectory.csv", &traj.to_csv(&run.ops))?;

    let avg = ergodic_average_diagnostic(&noise.z1, &noise.z2)?;
    let mut csv = String::from("t,average\n");
    for (i, v) in avg.values.iter().enumerate() {
        let _ = writeln!(csv, "{},{v}", avg.grid.time(i));
    }
    out.write("ergodic.csv", &csv)?;

    let blocks = match block_table(&run, &noise, &traj) {
        Ok(rows) => {
            out.write("blocks.csv", &block_table_csv(&rows))?;
            Some(rows.len())
        }
        Err(fracstab::Error::InvalidParameter { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let (f, g, h) = gronwall_triple(&run.ops, &traj);
    let gronwall = uniform_gronwall_check(&f, &g, &h, 1.0, 0.0).ok();
    let integrated = if residual {
        Some(integrated_residual(&run, &noise, &traj)?)
    } else {
        None
    };

    out.write_json(
        "simulate_report.json",
        &json!({
            "seed": seed,
            "setup": setup_json(&setup),
            "fit": FitJson::from(&report.fit),
            "verdict": report.verdict,
            "ergodic_average_final": avg.values.last(),
            "block_rows": blocks,
            "gronwall": gronwall.map(|g| json!({"a1": g.a1, "a2": g.a2, "a3": g.a3, "holds": g.holds})),
            "integrated_residual": integrated,
        }),
    )?;
    out.write_svg("simulate.svg", || {
        error_plot(traj.grid, &[("seed".into(), &report.energy_traces.0)])
    })?;
    let mut lines = vec![format!(
        "simulate: slope {:.6}, lambda {}, verdict {}",
        report.fit.slope,
        fmt_opt(report.lambda_theory),
        fmt_verdict(report.verdict)
    )];
    if let Some(r) = integrated {
        lines.push(format!("integrated residual {r:.3e}"));
    }
    let verdict = (report.verdict == Some(false)).then(|| "stability check failed".to_owned());
    Ok((lines, vec![seed], verdict))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.6}"))
}

fn fmt_verdict(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "not applicable",
    }
}

fn require_hypothesis(setup: &StabilitySetup, nu: f64) -> Result<(), CliError> {
    if setup.rate.hypothesis_holds {
        return Ok(());
    }
    let k = setup.constants;
    let threshold = k.c0_hat * k.lambda1 * setup.stationary.au_star_sq + k.alpha0 * k.lambda1;
    Err(CliError::validation(format!(
        "stability-hypothesis: fail (nu = {nu} against threshold {threshold:.6}; verdict not applicable)"
    )))
}

fn stability(loaded: &LoadedConfig, out: &mut OutputDir, ensemble: Option<usize>) -> Result<Ran, CliError> {
    let run = loaded.run_config()?;
    let c = &loaded.config;
    if run.rhos().is_none() {
        return Err(CliError::validation(
            "stability-hypothesis: fail (stability runs need exponential envelopes)",
        ));
    }
    let ensemble = ensemble.unwrap_or(c.run.ensemble);
    let setup = stability_setup(&run, c.run.c0_samples)?;
    require_hypothesis(&setup, run.nu)?;
    let exp = run_ensemble(&run, setup, ensemble, c.run.slope_tolerance);
    let mut csv = String::from("index,seed,slope,r_squared,fully_converged,verdict,error\n");
    let mut traces = Vec::new();
    for o in &exp.outcomes {
        match &o.report {
            Ok(r) => {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},",
                    o.index,
                    o.seed,
                    r.fit.slope,
                    r.fit.r_squared,
                    r.fit.fully_converged,
                    fmt_verdict(r.verdict)
                );
                out.write(
                    &format!("trajectory_{}.csv", o.index),
                    &error_trace_csv(run.grid, &r.energy_traces.0, &r.energy_traces.1),
                )?;
                traces.push((format!("seed {}", o.index), r.energy_traces.0.as_slice()));
            }
            Err(e) => {
                let _ = writeln!(
                    csv,
                    "{},{},,,,error,\"{}\"",
                    o.index,
                    o.seed,
                    e.to_string().replace('"', "'")
                );
            }
        }
    }
    out.write("stability_seeds.csv", &csv)?;
    let pass = exp.pass_fraction();
    out.write_json(
        "stability_report.json",
        &json!({
            "ensemble": ensemble,
            "slope_tolerance": exp.slope_tolerance,
            "setup": setup_json(&exp.setup),
            "pass_fraction": pass,
            "seeds": exp.outcomes.iter().map(|o| o.seed).collect::<Vec<_>>(),
            "fits": exp.outcomes.iter().map(|o| o.report.as_ref().ok().map(|r| FitJson::from(&r.fit))).collect::<Vec<_>>(),
            "errors": exp.outcomes.iter().map(|o| o.report.as_ref().err().map(|e| e.to_string())).collect::<Vec<_>>(),
        }),
    )?;
    traces.truncate(6);
    out.write_svg("stability.svg", || error_plot(run.grid, &traces))?;
    let lambda = exp.setup.rate.lambda.unwrap_or(f64::NAN);
    let lines = vec![
        format!(
            "stability: lambda = {lambda:.6}, threshold slope {:.6}",
            -lambda / 2.0 + exp.slope_tolerance * lambda
        ),
        format!("pass_fraction {}", fmt_opt(pass)),
    ];
    let seeds = exp.outcomes.iter().map(|o| o.seed).collect();
    let verdict = (pass != Some(1.0)).then(|| format!("stability check failed: pass fraction {}", fmt_opt(pass)));
    Ok((lines, seeds, verdict))
}

fn energy(loaded: &LoadedConfig, out: &mut OutputDir, ensemble: Option<usize>) -> Result<Ran, CliError> {
    let run = loaded.run_config()?;
    let c = &loaded.config;
    let horizons = &c.run.horizons;
    if horizons.is_empty() {
        return Err(CliError::validation("run.horizons is empty"));
    }
    let ensemble = ensemble.unwrap_or(c.run.ensemble);
    let probes: Vec<(u64, fracstab::Result<EnergyProbe>)> = (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let mut cfg = run.clone();
            cfg.seed = ensemble_seed(run.seed, i);
            (cfg.seed, uniform_energy_probe(&cfg, horizons))
        })
        .collect();
    let mut csv = String::from("index,seed");
    for t in horizons {
        let _ = write!(csv, ",sup_{t}");
    }
    csv.push_str(",verdict,failure\n");
    let mut passed = 0;
    for (i, (seed, p)) in probes.iter().enumerate() {
        let _ = write!(csv, "{i},{seed}");
        match p {
            Ok(p) => {
                for k in 0..horizons.len() {
                    match p.sups.get(k) {
                        Some(s) => {
                            let _ = write!(csv, ",{s}");
                        }
                        None => csv.push(','),
                    }
                }
                let failure = p
                    .failure
                    .as_ref()
                    .map(|e| e.to_string().replace(',', ";"))
                    .unwrap_or_default();
                let _ = writeln!(csv, ",{},{failure}", p.verdict);
                passed += usize::from(p.verdict);
            }
            Err(e) => {
                csv.push_str(&",".repeat(horizons.len()));
                let _ = writeln!(csv, ",false,{}", e.to_string().replace(',', ";"));
            }
        }
    }
    out.write("energy.csv", &csv)?;
    let seeds = probes.iter().map(|p| p.0).collect();
    let lines = vec![format!("energy: verdict true on {passed}/{ensemble} seeds")];
    let verdict = (passed != ensemble).then(|| "uniform energy bound check failed".to_owned());
    Ok((lines, seeds, verdict))
}

fn sweep(
    loaded: &LoadedConfig,
    out: &mut OutputDir,
    param: &str,
    values: &str,
    ensemble: Option<usize>,
) -> Result<Ran, CliError> {
    let values: Vec<f64> = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::validation(format!("sweep value `{v}` is not a number")))
        })
        .collect::<Result<_, _>>()?;
    if values.is_empty() {
        return Err(CliError::validation("sweep needs at least one value"));
    }
    let ensemble = ensemble.unwrap_or(loaded.config.run.ensemble);
    let mut csv = String::from(
        "param,value,alpha,hypothesis,lambda_theory,pass_fraction,mean_slope,ergodic_tail,mean_sup_h3_z1\n",
    );
    let mut lines = Vec::new();
    let mut seeds = Vec::new();
    for &value in &values {
        let mut variant = loaded.clone();
        let cfg = &mut variant.config;
        match param {
            "H" | "hurst" => {
                cfg.noise.hurst = value;
                let h = HurstParam::new(value)?;
                if FracOrder::new(cfg.noise.alpha)
                    .and_then(|a| a.check_young_window(h))
                    .is_err()
                {
                    let (lo, hi) = FracOrder::young_window(h);
                    cfg.noise.alpha = 0.5 * (lo + hi);
                }
            }
            "alpha" => cfg.noise.alpha = value,
            "beta" => cfg.model.beta = value,
            "nu" => cfg.model.nu = value,
            "rho" => cfg.envelopes.rho = value,
            "M" | "m" => cfg.envelopes.m = value,
            other => {
                return Err(CliError::validation(format!(
                    "unknown sweep parameter `{other}` (H, alpha, beta, nu, rho, M)"
                )))
            }
        }
        let failed: Vec<String> = validate(&variant, false)
            .iter()
            .filter(|c| !c.passed)
            .map(Check::line)
            .collect();
        if !failed.is_empty() {
            return Err(CliError::validation(format!(
                "{param} = {value}: {}",
                failed.join("; ")
            )));
        }
        let run = variant.run_config()?;
        let setup = stability_setup(&run, variant.config.run.c0_samples)?;
        let tol = variant.config.run.slope_tolerance;
        let rows: Vec<(u64, fracstab::Result<SweepRow>)> = (0..ensemble)
            .into_par_iter()
            .map(|i| {
                let seed = ensemble_seed(run.seed, i);
                let row = (|| {
                    let noise = simulate_noise(&run, seed)?;
                    let traj = integrate_transformed(&run, &noise, &setup.stationary.u_star)?;
                    let report = report_from_trajectory(&run, &setup, seed, tol, &traj);
                    let avg = ergodic_average_diagnostic(&noise.z1, &noise.z2)?;
                    let tail = *avg.values.last().expect("non-empty grid");
                    let sup = noise.z1.sup_h3(0.0, run.grid.horizon());
                    Ok((report.fit.slope, tail, sup, report.verdict))
                })();
                (seed, row)
            })
            .collect();
        seeds.extend(rows.iter().map(|r| r.0));
        let ok: Vec<_> = rows.iter().filter_map(|r| r.1.as_ref().ok()).collect();
        if ok.len() != rows.len() {
            let e = rows.iter().find_map(|r| r.1.as_ref().err()).expect("an error row");
            return Err(CliError::runtime(format!("{param} = {value}: {e}")));
        }
        let n = ok.len() as f64;
        let mean = |f: &dyn Fn(&SweepRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
        let pass = setup
            .rate
            .lambda
            .map(|_| ok.iter().filter(|r| r.3 == Some(true)).count() as f64 / n);
        let (slope, tail, sup) = (mean(&|r| r.0), mean(&|r| r.1), mean(&|r| r.2));
        let _ = writeln!(
            csv,
            "{param},{value},{},{},{},{},{slope},{tail},{sup}",
            run.alpha.value(),
            setup.rate.hypothesis_holds,
            setup.rate.lambda.map_or("n/a".into(), |l| l.to_string()),
            pass.map_or("n/a".into(), |p| p.to_string()),
        );
        lines.push(format!(
            "{param} = {value}: alpha {}, lambda {}, pass_fraction {}, mean slope {slope:.4}, ergodic tail {tail:.4e}",
            run.alpha.value(),
            fmt_opt(setup.rate.lambda),
            fmt_opt(pass)
        ));
    }
    out.write("sweep.csv", &csv)?;
    Ok((lines, seeds, None))
}
