use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mobflow::cli::{read_config, run_command, Command};
use mobflow::grid::{DensityField, Grid};
use mobflow::jko::{run_trajectory, JkoControls};
use mobflow::model::{self, Mobility, ModelParams};
use mobflow::reference::{run_reference, TimeStep};
use mobflow::transport::{self, DistanceOptions};
use mobflow::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::InvalidParams(_)
        | Error::InvalidPath(_)
        | Error::MassMismatch(..)
        | Error::BadExponent(_)
        | Error::SingularMobility
        | Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn field(values: Vec<f64>, extents: &[f64], cells: &[usize]) -> PyResult<DensityField> {
    let grid = Grid::new(extents, cells).map_err(to_py)?;
    DensityField::new(grid, values).map_err(to_py)
}

fn params(p: f64, alpha: f64, chi: f64, dim: usize, eps: f64) -> PyResult<ModelParams> {
    ModelParams::new(p, alpha, chi, dim, eps).map_err(to_py)
}

fn mobility(kind: &str, alpha: f64, eps: f64) -> PyResult<Mobility> {
    match kind {
        "model" | "power" => Ok(Mobility::Power { alpha, eps }),
        "linear" => Ok(Mobility::Linear),
        "constant" => Ok(Mobility::Constant { value: 1.0 }),
        other => Err(PyValueError::new_err(format!(
            "unknown mobility {other:?}; expected model, linear or constant"
        ))),
    }
}

/// Regime label of (p, alpha) in dimension `dim`.
#[pyfunction]
fn classify_regime(p: f64, alpha: f64, dim: usize) -> PyResult<String> {
    let label = model::classify_regime(&params(p, alpha, 1.0, dim, 0.0)?);
    Ok(format!("{:?}", label.regime))
}

/// Entropy U_eps(r) with U_eps'' m_eps = 1.
#[pyfunction]
fn u_epsilon(r: f64, alpha: f64, eps: f64) -> PyResult<f64> {
    model::u_epsilon(r, &params(1.0 + alpha, alpha, 1.0, 1, eps)?).map_err(to_py)
}

/// Proximal map of sigma |w|^2 / m(rho) at (rho_tilde, w_tilde).
#[pyfunction]
#[pyo3(signature = (rho_tilde, w_tilde, sigma, alpha=0.5, eps=1e-3, mobility_kind="model"))]
fn prox_action(
    rho_tilde: f64,
    w_tilde: Vec<f64>,
    sigma: f64,
    alpha: f64,
    eps: f64,
    mobility_kind: &str,
) -> PyResult<(f64, Vec<f64>)> {
    let mob = mobility(mobility_kind, alpha, eps)?;
    transport::prox_action(rho_tilde, &w_tilde, sigma, &mob).map_err(to_py)
}

/// Weighted Wasserstein distance between two densities on a box.
#[pyfunction]
#[pyo3(signature = (mu0, mu1, extents, cells, mobility_kind="model", alpha=0.5, eps=1e-3, n_t=16, tol=1e-6, max_iter=20000))]
#[allow(clippy::too_many_arguments)]
fn solve_distance<'py>(
    py: Python<'py>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    extents: Vec<f64>,
    cells: Vec<usize>,
    mobility_kind: &str,
    alpha: f64,
    eps: f64,
    n_t: usize,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let a = field(mu0, &extents, &cells)?;
    let b = field(mu1, &extents, &cells)?;
    let mob = mobility(mobility_kind, alpha, eps)?;
    let opts = DistanceOptions {
        n_t,
        tol,
        max_iter,
        ..DistanceOptions::default()
    };
    let res = py
        .detach(|| transport::solve_distance(&a, &b, &mob, &opts))
        .or_else(|e| e.into_best_distance())
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("value", res.value)?;
    d.set_item("gap", res.primal_dual_gap)?;
    d.set_item("iterations", res.iterations)?;
    d.set_item("converged", res.converged)?;
    Ok(d)
}

/// JKO trajectory from (u0, v0); u0 must have unit mass.
#[pyfunction]
#[pyo3(signature = (u0, v0, extents, cells, tau, t_end, p=1.5, alpha=0.5, chi=1.0, eps=1e-3))]
#[allow(clippy::too_many_arguments)]
fn jko_run<'py>(
    py: Python<'py>,
    u0: Vec<f64>,
    v0: Vec<f64>,
    extents: Vec<f64>,
    cells: Vec<usize>,
    tau: f64,
    t_end: f64,
    p: f64,
    alpha: f64,
    chi: f64,
    eps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let u = field(u0, &extents, &cells)?;
    let v = field(v0, &extents, &cells)?;
    let pm = params(p, alpha, chi, extents.len(), eps)?;
    let traj = py
        .detach(|| run_trajectory(&u, &v, tau, t_end, &pm, &JkoControls::default()))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("times", traj.times())?;
    d.set_item("energy", traj.records.iter().map(|r| r.energy).collect::<Vec<_>>())?;
    d.set_item("f_tau", traj.records.iter().map(|r| r.f_tau).collect::<Vec<_>>())?;
    d.set_item("mass", traj.records.iter().map(|r| r.mass).collect::<Vec<_>>())?;
    d.set_item("min_u", traj.records.iter().map(|r| r.min_u).collect::<Vec<_>>())?;
    d.set_item(
        "u",
        traj.states.iter().map(|s| s.u.values().to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "v",
        traj.states.iter().map(|s| s.v.values().to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item("aborted", traj.aborted)?;
    Ok(d)
}

/// Finite-volume reference run with snapshots every `every`.
#[pyfunction]
#[pyo3(signature = (u0, v0, extents, cells, t_end, every, p=1.5, alpha=0.5, chi=1.0, eps=1e-3, dt=None, regularized=true))]
#[allow(clippy::too_many_arguments)]
fn reference_run<'py>(
    py: Python<'py>,
    u0: Vec<f64>,
    v0: Vec<f64>,
    extents: Vec<f64>,
    cells: Vec<usize>,
    t_end: f64,
    every: f64,
    p: f64,
    alpha: f64,
    chi: f64,
    eps: f64,
    dt: Option<f64>,
    regularized: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let u = field(u0, &extents, &cells)?;
    let v = field(v0, &extents, &cells)?;
    let pm = params(p, alpha, chi, extents.len(), eps)?;
    let step = dt.map_or(TimeStep::Cfl { fraction: 1.0 }, |dt| TimeStep::Fixed { dt });
    let run = py
        .detach(|| run_reference(&u, &v, step, t_end, every, &pm, regularized))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("times", run.snapshots.iter().map(|s| s.t).collect::<Vec<_>>())?;
    d.set_item(
        "u",
        run.snapshots.iter().map(|s| s.u.values().to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "v",
        run.snapshots.iter().map(|s| s.v.values().to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item("steps", run.steps)?;
    d.set_item("aborted", run.aborted)?;
    Ok(d)
}

/// Runs a CLI configuration; returns the exit status.
#[pyfunction]
#[pyo3(signature = (config, command, out=None))]
fn run_config(py: Python<'_>, config: PathBuf, command: &str, out: Option<PathBuf>) -> PyResult<i32> {
    let command = match command {
        "wdist" => Command::Wdist,
        "jko" => Command::Jko,
        "reference" => Command::Reference,
        "compare" => Command::Compare,
        "diagnose" => Command::Diagnose,
        "sweep" => Command::Sweep,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let mut spec = read_config(&config).map_err(to_py)?;
    spec.command = Some(command);
    if let Some(out) = out {
        spec.output.dir = out;
    }
    spec.validate().map_err(to_py)?;
    let outcome = py.detach(|| run_command(&spec));
    Ok(outcome.status as i32)
}

#[pymodule]
fn pymobflow(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(classify_regime, m)?)?;
    m.add_function(wrap_pyfunction!(u_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(prox_action, m)?)?;
    m.add_function(wrap_pyfunction!(solve_distance, m)?)?;
    m.add_function(wrap_pyfunction!(jko_run, m)?)?;
    m.add_function(wrap_pyfunction!(reference_run, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
