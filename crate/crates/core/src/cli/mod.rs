//! Batch front door: `mobflow <command> --config <file>`.

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::diagnostics::{compare_trajectories, diagnose, DiagnosticsReport, RunData};
use crate::error::{Error, Result};
use crate::jko::{run_trajectory, Trajectory};
use crate::model::classify_regime;
use crate::reference::{run_reference, TimeStep};
use crate::snapshots::{read_snapshots, write_snapshots};
use crate::transport::{solve_distance, DistanceOptions};

pub use config::{parse_config, read_config, Command, RunSpec};
pub use plot::{emit_plot, render_svg, PlotLabels, Series};

#[derive(Debug, Parser)]
#[command(name = "mobflow", version, about = "JKO scheme and diagnostics for Keller-Segel with nonlinear mobility")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration (or a manifest.json of an earlier run).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding `[output] dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run parameters outside the covered existence regimes.
    #[arg(long)]
    pub allow_uncovered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    ConfigError = 2,
    SolverFailure = 3,
    DiagnosticFailure = 4,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: ExitStatus,
    pub dir: PathBuf,
    pub message: String,
}

impl Outcome {
    fn ok(dir: &Path, message: String) -> Self {
        Outcome {
            status: ExitStatus::Ok,
            dir: dir.to_path_buf(),
            message,
        }
    }
}

/// Applies the command-line overrides to the config file contents.
pub fn spec_from_cli(cli: &Cli) -> Result<RunSpec> {
    let mut spec = read_config(&cli.config)?;
    spec.command = Some(cli.command);
    if let Some(out) = &cli.out {
        spec.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if cli.allow_uncovered {
        spec.model.allow_uncovered = true;
    }
    spec.validate()?;
    Ok(spec)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::ConfigError as i32 } else { 0 };
        }
    };
    if let Ok(n) = std::env::var("MOBFLOW_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("MOBFLOW_THREADS must be a positive integer, got {n:?}");
                return ExitStatus::ConfigError as i32;
            }
        }
    }
    let spec = match spec_from_cli(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitStatus::ConfigError as i32;
        }
    };
    let out = run_command(&spec);
    if out.status == ExitStatus::Ok {
        println!("{}", out.message);
    } else {
        eprintln!("{}", out.message);
    }
    out.status as i32
}

/// Runs a validated spec. Failures carry the stage that failed; artifacts
/// produced before a failure are kept.
pub fn run_command(spec: &RunSpec) -> Outcome {
    let command = spec.command.unwrap_or(Command::Jko);
    let dir = match command {
        Command::Diagnose => spec
            .diagnose
            .as_ref()
            .map_or_else(|| spec.output.dir.clone(), |d| d.input.clone()),
        _ => spec.output.dir.clone(),
    };
    let result = match command {
        Command::Wdist => cmd_wdist(spec, &dir),
        Command::Jko => cmd_jko(spec, &dir),
        Command::Reference => cmd_reference(spec, &dir),
        Command::Compare => cmd_compare(spec, &dir),
        Command::Diagnose => cmd_diagnose(spec, &dir),
        Command::Sweep => cmd_sweep(spec, &dir),
    };
    match result {
        Ok(o) => o,
        Err(e) => Outcome {
            status: match e {
                Error::Config(_) => ExitStatus::ConfigError,
                _ => ExitStatus::SolverFailure,
            },
            dir,
            message: format!("{}: {e}", command.name()),
        },
    }
}

fn run_echo(spec: &RunSpec, wall_time: f64) -> Map<String, Value> {
    let regime = spec.params().ok().map(|p| classify_regime(&p));
    let mut m = Map::new();
    m.insert(
        "run".into(),
        json!({
            "spec": spec,
            "version": env!("CARGO_PKG_VERSION"),
            "regime": regime,
            "wall_time_s": wall_time,
        }),
    );
    m
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value).expect("serializable"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run_plots(dir: &Path, run: &RunData, report: &DiagnosticsReport) -> Result<()> {
    let rows = &report.norms.rows;
    let col = |f: fn(&crate::diagnostics::NormRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.t, f(r))).collect()
    };
    emit_plot(
        &[Series::new("E", col(|r| r.energy))],
        &PlotLabels::new("energy", "t", "E(u, v)"),
        &dir.join("energy.svg"),
    )?;
    emit_plot(
        &[Series::new("mass", col(|r| r.mass))],
        &PlotLabels::new("mass of u", "t", "mass"),
        &dir.join("mass.svg"),
    )?;
    emit_plot(
        &[
            Series::new("|u|_{p+1-a}", col(|r| r.u_norm)),
            Series::new("|v|_H1", col(|r| r.v_h1)),
            Series::new("|v|_H2", col(|r| r.v_h2)),
        ],
        &PlotLabels::new("a priori norms", "t", "norm"),
        &dir.join("norms.svg"),
    )?;
    let _ = run;
    Ok(())
}

fn diagnose_status(command: &str, report: &DiagnosticsReport, dir: &Path, ok_msg: String) -> Outcome {
    if report.pass {
        Outcome::ok(dir, ok_msg)
    } else {
        Outcome {
            status: ExitStatus::DiagnosticFailure,
            dir: dir.to_path_buf(),
            message: format!(
                "{command}: diagnostics failed (energy {}, conservation {}, v-residual {}); see {}",
                report.energy.pass,
                report.conservation.pass,
                report.v_residual_pass,
                dir.join("report.json").display()
            ),
        }
    }
}

fn initial_pair(spec: &RunSpec) -> Result<(crate::grid::DensityField, crate::grid::DensityField)> {
    let g = spec.grid()?;
    let u0 = spec.initial.u.density(&g)?;
    let v0 = match &spec.initial.v {
        Some(p) => p.field(&g)?,
        None => u0.clone(),
    };
    Ok((u0, v0))
}

fn cmd_wdist(spec: &RunSpec, dir: &Path) -> Result<Outcome> {
    let g = spec.grid()?;
    let missing = || Error::Config(vec!["initial.mu0/mu1: missing".into()]);
    let mu0 = spec.initial.mu0.as_ref().ok_or_else(missing)?.density(&g)?;
    let mu1 = spec.initial.mu1.as_ref().ok_or_else(missing)?.density(&g)?;
    let mob = spec.distance_mobility()?;
    let opts: DistanceOptions = spec.solver.distance.into();
    let start = Instant::now();
    let res = match solve_distance(&mu0, &mu1, &mob, &opts) {
        Ok(r) => r,
        Err(e) => e.into_best_distance()?,
    };
    let wall = start.elapsed().as_secs_f64();
    create_dir(dir)?;
    write_json(&dir.join("distance.json"), &res.summary())?;
    res.path.write_csv(&dir.join("path"))?;
    let hist: Vec<(f64, f64)> = res
        .action_history
        .iter()
        .enumerate()
        .map(|(i, a)| (i as f64, *a))
        .collect();
    emit_plot(
        &[Series::new("action", hist)],
        &PlotLabels::new("action per residual check", "check", "W^2 estimate"),
        &dir.join("action.svg"),
    )?;
    let mut manifest = run_echo(spec, wall);
    manifest.insert("kind".into(), Value::from("wdist"));
    write_json(&dir.join("manifest.json"), &manifest)?;
    let msg = format!(
        "W = {:.10e} (gap {:.2e}, {} iterations)",
        res.value, res.primal_dual_gap, res.iterations
    );
    Ok(if res.converged {
        Outcome::ok(dir, msg)
    } else {
        Outcome {
            status: ExitStatus::SolverFailure,
            dir: dir.to_path_buf(),
            message: format!("wdist: iteration cap reached; best iterate {msg}"),
        }
    })
}

fn jko_run(spec: &RunSpec, tau: f64, dir: &Path) -> Result<(Trajectory, DiagnosticsReport)> {
    let params = spec.params()?;
    let (u0, v0) = initial_pair(spec)?;
    let start = Instant::now();
    let traj = run_trajectory(
        &u0,
        &v0,
        tau,
        spec.discretization.t_end,
        &params,
        &spec.solver.jko,
    )?;
    let wall = start.elapsed().as_secs_f64();
    traj.save_strided(dir, spec.output.stride, run_echo(spec, wall))?;
    let run = RunData::from_trajectory(&traj);
    let report = diagnose(&run, true, &spec.diagnose_options())?;
    report.write(dir)?;
    run_plots(dir, &run, &report)?;
    Ok((traj, report))
}

fn cmd_jko(spec: &RunSpec, dir: &Path) -> Result<Outcome> {
    let (traj, report) = jko_run(spec, spec.discretization.tau, dir)?;
    if let Some(reason) = &traj.aborted {
        return Ok(Outcome {
            status: ExitStatus::SolverFailure,
            dir: dir.to_path_buf(),
            message: format!("jko: {reason}"),
        });
    }
    let msg = format!(
        "jko: {} steps to t = {}, final energy {:.10e}",
        traj.states.len() - 1,
        traj.final_time(),
        traj.records.last().map_or(f64::NAN, |r| r.energy)
    );
    Ok(diagnose_status("jko", &report, dir, msg))
}

fn reference_run(spec: &RunSpec, dir: &Path) -> Result<(crate::reference::ReferenceRun, DiagnosticsReport)> {
    let params = spec.params()?;
    let (u0, v0) = initial_pair(spec)?;
    let d = &spec.discretization;
    let step = match d.dt {
        Some(dt) => TimeStep::Fixed { dt },
        None => TimeStep::Cfl {
            fraction: d.cfl_fraction,
        },
    };
    let start = Instant::now();
    let run = run_reference(&u0, &v0, step, d.t_end, spec.snapshot_every(), &params, d.regularized)?;
    let wall = start.elapsed().as_secs_f64();
    let mut extra = run_echo(spec, wall);
    extra.insert("params".into(), serde_json::to_value(params).expect("params"));
    extra.insert("regularized".into(), Value::from(d.regularized));
    extra.insert("time_step".into(), serde_json::to_value(step).expect("step"));
    extra.insert("steps".into(), Value::from(run.steps));
    extra.insert("aborted".into(), run.aborted.clone().map_or(Value::Null, Value::from));
    let series = run.series();
    write_snapshots(dir, "reference", &series, extra)?;
    let data = RunData::from_series(series, params);
    let report = diagnose(&data, false, &spec.diagnose_options())?;
    report.write(dir)?;
    run_plots(dir, &data, &report)?;
    Ok((run, report))
}

fn cmd_reference(spec: &RunSpec, dir: &Path) -> Result<Outcome> {
    let (run, report) = reference_run(spec, dir)?;
    if let Some(reason) = &run.aborted {
        return Ok(Outcome {
            status: ExitStatus::SolverFailure,
            dir: dir.to_path_buf(),
            message: format!("reference: aborted: {reason}"),
        });
    }
    let msg = format!("reference: {} steps to t = {}", run.steps, spec.discretization.t_end);
    Ok(diagnose_status("reference", &report, dir, msg))
}

fn cmd_compare(spec: &RunSpec, dir: &Path) -> Result<Outcome> {
    let c = spec
        .compare
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["compare: missing".into()]))?;
    let (a, _) = read_snapshots(&c.a)?;
    let (b, _) = read_snapshots(&c.b)?;
    let cmp = compare_trajectories(&a, &b)?;
    create_dir(dir)?;
    write_text(&dir.join("comparison.csv"), &cmp.to_csv())?;
    write_json(&dir.join("comparison.json"), &cmp)?;
    let col = |f: fn(&crate::diagnostics::ComparisonRow) -> f64| -> Vec<(f64, f64)> {
        cmp.rows.iter().map(|r| (r.t, f(r))).collect()
    };
    emit_plot(
        &[
            Series::new("L1 u", col(|r| r.l1_u)),
            Series::new("L2 u", col(|r| r.l2_u)),
            Series::new("L1 v", col(|r| r.l1_v)),
            Series::new("L2 v", col(|r| r.l2_v)),
        ],
        &PlotLabels::new("discrepancy", "t", "norm of difference"),
        &dir.join("discrepancy.svg"),
    )?;
    let mut manifest = run_echo(spec, 0.0);
    manifest.insert("kind".into(), Value::from("compare"));
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(Outcome::ok(
        dir,
        format!("compare: max L1(u) = {:.6e}, max L1(v) = {:.6e}", cmp.max_l1_u, cmp.max_l1_v),
    ))
}

/// Loads a jko or reference directory as diagnostics input.
pub fn load_run(dir: &Path) -> Result<(RunData, bool)> {
    let (series, manifest) = read_snapshots(dir)?;
    if manifest.kind == "jko" {
        let traj = Trajectory::load(dir)?;
        return Ok((RunData::from_trajectory(&traj), true));
    }
    let params = manifest
        .extra
        .get("params")
        .cloned()
        .ok_or_else(|| Error::Parse {
            path: dir.join("manifest.json"),
            msg: "missing params".into(),
        })?;
    let params = serde_json::from_value(params).map_err(|e| Error::Parse {
        path: dir.join("manifest.json"),
        msg: format!("params: {e}"),
    })?;
    Ok((RunData::from_series(series, params), false))
}

fn cmd_diagnose(spec: &RunSpec, dir: &Path) -> Result<Outcome> {
    let (run, jko) = load_run(dir)?;
    let report = diagnose(&run, jko, &spec.diagnose_options())?;
    report.write(dir)?;
    run_plots(dir, &run, &report)?;
    let msg = format!(
        "diagnose: energy increase {:.3e}, mass error {:.3e}, u-residual {:.3e}, v-residual {:.3e}",
        report.energy.worst_increase,
        report.conservation.max_mass_error,
        report.weak.max_u,
        report.weak.max_v
    );
    Ok(diagnose_status("diagnose", &report, dir, msg))
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    tau: f64,
    steps: usize,
    aborted: bool,
    final_energy: f64,
    worst_energy_increase: f64,
    max_mass_error: f64,
    u_residual: f64,
    v_residual: f64,
    c4: Option<f64>,
    max_l1_u_vs_reference: Option<f64>,
    pass: bool,
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn cmd_sweep(spec: &RunSpec, dir: &Path) -> Result<Outcome> {
    let sweep = spec.sweep.clone().unwrap_or_default();
    create_dir(dir)?;
    let reference = if sweep.reference {
        let (run, _) = reference_run(spec, &dir.join("reference"))?;
        Some(run.series())
    } else {
        None
    };
    let rows = sweep
        .taus
        .par_iter()
        .enumerate()
        .map(|(i, &tau)| {
            let run_dir = dir.join(format!("tau_{i:02}"));
            let (traj, report) = jko_run(spec, tau, &run_dir)?;
            let l1 = match &reference {
                Some(r) => Some(compare_trajectories(&traj.snapshots(), r)?.max_l1_u),
                None => None,
            };
            Ok(SweepRow {
                tau,
                steps: traj.states.len() - 1,
                aborted: traj.aborted.is_some(),
                final_energy: traj.records.last().map_or(f64::NAN, |r| r.energy),
                worst_energy_increase: report.energy.worst_increase,
                max_mass_error: report.conservation.max_mass_error,
                u_residual: report.weak.max_u,
                v_residual: report.weak.max_v,
                c4: report.equicontinuity.as_ref().map(|e| e.c4),
                max_l1_u_vs_reference: l1,
                pass: report.pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from(
        "tau,steps,aborted,final_energy,worst_energy_increase,max_mass_error,u_residual,v_residual,c4,max_l1_u_vs_reference,pass\n",
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.tau,
            r.steps,
            r.aborted,
            r.final_energy,
            r.worst_energy_increase,
            r.max_mass_error,
            r.u_residual,
            r.v_residual,
            opt(r.c4),
            opt(r.max_l1_u_vs_reference),
            r.pass
        );
    }
    write_text(&dir.join("summary.csv"), &csv)?;
    write_json(&dir.join("summary.json"), &rows)?;
    let mut series = vec![Series::new(
        "u weak residual",
        rows.iter().map(|r| (r.tau, r.u_residual)).collect(),
    )];
    if reference.is_some() {
        series.push(Series::new(
            "max L1(u) vs reference",
            rows.iter()
                .filter_map(|r| r.max_l1_u_vs_reference.map(|v| (r.tau, v)))
                .collect(),
        ));
    }
    emit_plot(
        &series,
        &PlotLabels::new("refinement", "tau", "residual / discrepancy"),
        &dir.join("refinement.svg"),
    )?;
    let mut manifest = run_echo(spec, 0.0);
    manifest.insert("kind".into(), Value::from("sweep"));
    write_json(&dir.join("manifest.json"), &manifest)?;
    let status = if rows.iter().any(|r| r.aborted) {
        ExitStatus::SolverFailure
    } else if rows.iter().any(|r| !r.pass) {
        ExitStatus::DiagnosticFailure
    } else {
        ExitStatus::Ok
    };
    Ok(Outcome {
        status,
        dir: dir.to_path_buf(),
        message: format!("sweep: {} runs, summary in {}", rows.len(), dir.join("summary.csv").display()),
    })
}
