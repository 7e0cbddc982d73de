//! Run configuration: a TOML file with `[domain]`, `[model]`,
//! `[discretization]`, `[solver]`, `[initial]`, `[output]` and
//! `[diagnostics]` tables plus per-command tables. Every table and field
//! is optional; omitted values take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{DiagnoseOptions, Thresholds};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::jko::JkoControls;
use crate::model::{classify_regime, default_delta, Mobility, ModelParams};
use crate::presets::Preset;
use crate::transport::DistanceOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Wdist,
    Jko,
    Reference,
    Compare,
    Diagnose,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Wdist => "wdist",
            Command::Jko => "jko",
            Command::Reference => "reference",
            Command::Compare => "compare",
            Command::Diagnose => "diagnose",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSpec {
    /// Side lengths; one entry per dimension (1 or 2).
    pub extents: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            extents: vec![1.0],
            cells: vec![64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub p: f64,
    pub alpha: f64,
    pub chi: f64,
    pub eps: f64,
    pub delta: f64,
    /// Permit parameters outside every covered existence regime.
    pub allow_uncovered: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            p: 1.5,
            alpha: 0.5,
            chi: 1.0,
            eps: 1e-3,
            delta: default_delta(),
            allow_uncovered: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSpec {
    /// JKO time step.
    pub tau: f64,
    pub t_end: f64,
    /// Fixed reference-solver step; `None` steps at `cfl_fraction` of the
    /// stability bound.
    pub dt: Option<f64>,
    pub cfl_fraction: f64,
    /// Reference snapshot interval; defaults to `tau`.
    pub snapshot_every: Option<f64>,
    /// Reference solver uses the `m_eps` form of the equations.
    pub regularized: bool,
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        DiscretizationSpec {
            tau: 1e-3,
            t_end: 0.05,
            dt: None,
            cfl_fraction: 1.0,
            snapshot_every: None,
            regularized: true,
        }
    }
}

/// Mobility of the `wdist` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MobilitySpec {
    /// `m_eps` of the model table.
    Model,
    Constant { value: f64 },
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSpec {
    pub n_t: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub step_ratio: f64,
}

impl Default for DistanceSpec {
    fn default() -> Self {
        let d = DistanceOptions::default();
        DistanceSpec {
            n_t: d.n_t,
            max_iter: d.max_iter,
            tol: d.tol,
            step_ratio: d.step_ratio,
        }
    }
}

impl From<DistanceSpec> for DistanceOptions {
    fn from(d: DistanceSpec) -> Self {
        DistanceOptions {
            n_t: d.n_t,
            max_iter: d.max_iter,
            tol: d.tol,
            step_ratio: d.step_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub jko: JkoControls,
    pub distance: DistanceSpec,
    pub mobility: MobilitySpec,
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            jko: JkoControls::default(),
            distance: DistanceSpec::default(),
            mobility: MobilitySpec::Model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    /// Normalized to unit mass.
    pub u: Preset,
    /// Used as given; defaults to a copy of the initial `u`.
    pub v: Option<Preset>,
    /// Endpoints of the `wdist` command (normalized to unit mass).
    pub mu0: Option<Preset>,
    pub mu1: Option<Preset>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            u: Preset::CosinePerturbed {
                value: 1.0,
                amplitude: 0.5,
                mode: 1,
                axis: 0,
            },
            v: None,
            mu0: None,
            mu1: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Write every `stride`-th JKO step (the last one always).
    pub stride: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub thresholds: Thresholds,
    pub max_mode: usize,
    /// Pairs of the equi-continuity fit; 0 skips it.
    pub equicontinuity_pairs: usize,
    pub distance: DistanceSpec,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        let d = DiagnoseOptions::default();
        DiagnosticsSpec {
            thresholds: d.thresholds,
            max_mode: d.max_mode,
            equicontinuity_pairs: d.equicontinuity_pairs,
            distance: DistanceSpec {
                n_t: d.distance.n_t,
                max_iter: d.distance.max_iter,
                tol: d.distance.tol,
                step_ratio: d.distance.step_ratio,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSpec {
    /// Trajectory or reference directory; the report is written into it.
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub taus: Vec<f64>,
    /// Also run the reference solver and report the L1 discrepancy.
    pub reference: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            taus: vec![4e-3, 2e-3, 1e-3],
            reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Set from the command line when absent.
    pub command: Option<Command>,
    pub seed: u64,
    pub domain: DomainSpec,
    pub model: ModelSpec,
    pub discretization: DiscretizationSpec,
    pub solver: SolverSpec,
    pub initial: InitialSpec,
    pub output: OutputSpec,
    pub diagnostics: DiagnosticsSpec,
    pub compare: Option<CompareSpec>,
    pub diagnose: Option<DiagnoseSpec>,
    pub sweep: Option<SweepSpec>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            command: None,
            seed: 0,
            domain: DomainSpec::default(),
            model: ModelSpec::default(),
            discretization: DiscretizationSpec::default(),
            solver: SolverSpec::default(),
            initial: InitialSpec::default(),
            output: OutputSpec::default(),
            diagnostics: DiagnosticsSpec::default(),
            compare: None,
            diagnose: None,
            sweep: None,
        }
    }
}

fn positive(v: &mut Vec<String>, path: &str, x: f64) {
    if !(x > 0.0) || !x.is_finite() {
        v.push(format!("{path}: must be > 0, got {x}"));
    }
}

impl RunSpec {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.domain.extents, &self.domain.cells)
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        ModelParams::new(m.p, m.alpha, m.chi, self.domain.extents.len(), m.eps)?
            .with_delta(m.delta)
    }

    pub fn distance_mobility(&self) -> Result<Mobility> {
        Ok(match self.solver.mobility {
            MobilitySpec::Model => self.params()?.mobility(),
            MobilitySpec::Constant { value } => Mobility::Constant { value },
            MobilitySpec::Linear => Mobility::Linear,
        })
    }

    pub fn diagnose_options(&self) -> DiagnoseOptions {
        let d = &self.diagnostics;
        DiagnoseOptions {
            thresholds: d.thresholds,
            max_mode: d.max_mode,
            equicontinuity_pairs: d.equicontinuity_pairs,
            distance: d.distance.into(),
        }
    }

    pub fn snapshot_every(&self) -> f64 {
        self.discretization
            .snapshot_every
            .unwrap_or(self.discretization.tau)
    }

    /// Every problem with the spec, each prefixed by its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let dim = self.domain.extents.len();
        if !(1..=2).contains(&dim) || self.domain.cells.len() != dim {
            v.push(format!(
                "domain: need 1 or 2 extents and as many cell counts, got {:?} and {:?}",
                self.domain.extents, self.domain.cells
            ));
        }
        let grid = match self.grid() {
            Ok(g) => Some(g),
            Err(e) => {
                v.push(format!("domain: {e}"));
                None
            }
        };
        let m = &self.model;
        let params = ModelParams {
            p: m.p,
            alpha: m.alpha,
            chi: m.chi,
            dim: dim.max(1),
            eps: m.eps,
            delta: m.delta,
        };
        for msg in params.violations() {
            let field = msg.split_whitespace().next().unwrap_or("model");
            v.push(format!("model.{field}: {msg}"));
        }
        if params.violations().is_empty() && !m.allow_uncovered {
            let label = classify_regime(&params);
            if !label.is_covered() {
                v.push(format!(
                    "model.p: (p, alpha) = ({}, {}) lies outside every covered regime: need \
                     p = 1 + alpha, or {:.6} = 1 + alpha - 2/d < p < 1 + alpha with alpha >= (1 + p)/3, \
                     or the critical p = 1 + alpha - 2/d with d >= 3; set allow_uncovered to run anyway",
                    m.p, m.alpha, label.critical_p
                ));
            }
        }
        let d = &self.discretization;
        positive(&mut v, "discretization.tau", d.tau);
        if !(d.t_end >= 0.0) || !d.t_end.is_finite() {
            v.push(format!("discretization.t_end: must be >= 0, got {}", d.t_end));
        }
        if let Some(dt) = d.dt {
            positive(&mut v, "discretization.dt", dt);
        }
        if !(d.cfl_fraction > 0.0 && d.cfl_fraction <= 1.0) {
            v.push(format!(
                "discretization.cfl_fraction: must lie in (0, 1], got {}",
                d.cfl_fraction
            ));
        }
        if let Some(s) = d.snapshot_every {
            positive(&mut v, "discretization.snapshot_every", s);
        }
        let j = &self.solver.jko;
        if j.n_t == 0 {
            v.push("solver.jko.n_t: must be >= 1".into());
        }
        if j.max_sweeps == 0 {
            v.push("solver.jko.max_sweeps: must be >= 1".into());
        }
        for (name, x) in [
            ("sweep_tol", j.sweep_tol),
            ("newton_tol", j.newton_tol),
            ("pd_tol", j.pd_tol),
        ] {
            positive(&mut v, &format!("solver.jko.{name}"), x);
        }
        for (path, ds) in [
            ("solver.distance", &self.solver.distance),
            ("diagnostics.distance", &self.diagnostics.distance),
        ] {
            if ds.n_t == 0 || ds.max_iter == 0 {
                v.push(format!("{path}: n_t and max_iter must be >= 1"));
            }
            positive(&mut v, &format!("{path}.tol"), ds.tol);
            positive(&mut v, &format!("{path}.step_ratio"), ds.step_ratio);
        }
        if let MobilitySpec::Constant { value } = self.solver.mobility {
            positive(&mut v, "solver.mobility.value", value);
        }
        if self.output.stride == 0 {
            v.push("output.stride: must be >= 1".into());
        }
        if let Some(g) = grid {
            let presets = [
                ("initial.u", Some(&self.initial.u)),
                ("initial.v", self.initial.v.as_ref()),
                ("initial.mu0", self.initial.mu0.as_ref()),
                ("initial.mu1", self.initial.mu1.as_ref()),
            ];
            for (path, p) in presets {
                if let Some(p) = p {
                    v.extend(p.violations(&g).into_iter().map(|m| format!("{path}: {m}")));
                }
            }
        }
        match self.command {
            Some(Command::Wdist) => {
                if self.initial.mu0.is_none() || self.initial.mu1.is_none() {
                    v.push("initial.mu0/mu1: wdist needs both endpoint presets".into());
                }
            }
            Some(Command::Compare) if self.compare.is_none() => {
                v.push("compare: compare needs a [compare] table with a and b".into());
            }
            Some(Command::Diagnose) if self.diagnose.is_none() => {
                v.push("diagnose: diagnose needs a [diagnose] table with input".into());
            }
            Some(Command::Sweep) => {
                let taus = self.sweep.as_ref().map(|s| s.taus.clone()).unwrap_or_default();
                if taus.is_empty() {
                    v.push("sweep.taus: sweep needs at least one tau".into());
                }
                for (i, t) in taus.iter().enumerate() {
                    positive(&mut v, &format!("sweep.taus[{i}]"), *t);
                }
            }
            None => v.push("command: not given on the command line or in the config".into()),
            _ => {}
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Parses a TOML config, or a `manifest.json` written by a previous run
/// (its spec echo), without validating it.
pub fn read_config(path: &Path) -> Result<RunSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        let spec = value
            .pointer("/run/spec")
            .cloned()
            .ok_or_else(|| Error::Config(vec![format!("{}: no run.spec entry", path.display())]))?;
        serde_json::from_value(spec)
            .map_err(|e| Error::Config(vec![format!("{}: run.spec: {e}", path.display())]))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))
    }
}

/// [`read_config`] followed by validation; reports every violation.
pub fn parse_config(path: &Path) -> Result<RunSpec> {
    let spec = read_config(path)?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunSpec> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        parse_config(&path)
    }

    fn messages(r: Result<RunSpec>) -> Vec<String> {
        match r {
            Err(Error::Config(v)) => v,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let spec = parse("command = \"jko\"\n").unwrap();
        assert_eq!(spec.discretization.tau, 1e-3);
        assert_eq!(spec.solver.jko, JkoControls::default());
        assert_eq!(spec.domain.cells, vec![64]);
        assert_eq!(spec.params().unwrap().p, 1.5);
    }

    #[test]
    fn all_violations_reported() {
        let v = messages(parse(
            "command = \"jko\"\n[model]\nalpha = 1.2\nchi = -1.0\n[discretization]\ntau = 0.0\n",
        ));
        assert!(v.iter().any(|m| m.contains("alpha must lie in (0,1)")), "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("model.chi")), "{v:?}");
        assert!(v.iter().any(|m| m.starts_with("discretization.tau")), "{v:?}");
    }

    #[test]
    fn uncovered_regime_needs_flag() {
        let text = "command = \"jko\"\n[domain]\nextents = [1.0, 1.0]\ncells = [8, 8]\n[model]\np = 1.2\nalpha = 0.5\n";
        let v = messages(parse(text));
        assert!(v.iter().any(|m| m.contains("1 + alpha - 2/d")), "{v:?}");
        let ok = parse(&text.replace("alpha = 0.5", "alpha = 0.5\nallow_uncovered = true"));
        assert!(ok.is_ok());
    }

    #[test]
    fn unknown_fields_and_missing_tables() {
        assert!(matches!(parse("[model]\npp = 2.0\n"), Err(Error::Config(_))));
        let v = messages(parse("command = \"compare\"\n"));
        assert!(v[0].starts_with("compare"));
    }
}
