//! Minimizing-movement stepper: each step approximately minimizes
//! `F_tau(u, v) = (W_m(u, u_prev)^2 / chi + ||v - v_prev||^2) / (2 tau) + E(u, v)`
//! by alternating an exact elliptic `v`-block with a convex transport
//! `u`-block.

mod ustep;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::grid::{solve_elliptic, Coefficient, DensityField, EllipticOptions};
use crate::model::{classify_regime, energy, ModelParams, RegimeLabel};
use crate::snapshots::{read_snapshots, write_snapshots, SnapshotSeries};
use crate::transport::spacetime::SpaceTime;
use crate::transport::{solve_distance, DistanceOptions, EndTerm, TransportPath};
use ustep::FreeEnd;

/// Inner-solver controls of the stepper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JkoControls {
    /// Time intervals of the discrete transport path inside one step.
    pub n_t: usize,
    pub max_sweeps: usize,
    /// Relative `F_tau` change that ends the block alternation.
    pub sweep_tol: f64,
    /// Newton stops when the gradient falls by this factor.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Primal-dual fallback controls.
    pub pd_max_iter: usize,
    pub pd_tol: f64,
    /// Slack of the stay-put acceptance test.
    pub accept_tol: f64,
}

impl Default for JkoControls {
    fn default() -> Self {
        JkoControls {
            n_t: 2,
            max_sweeps: 5,
            sweep_tol: 1e-7,
            newton_tol: 1e-11,
            max_newton: 50,
            pd_max_iter: 50_000,
            pd_tol: 1e-7,
            accept_tol: 1e-8,
        }
    }
}

/// Solver bookkeeping of one accepted step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub sweeps: usize,
    pub inner_iterations: usize,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JkoState {
    pub u: DensityField,
    pub v: DensityField,
    pub k: usize,
    pub f_tau_value: f64,
    /// `W_m(u^k, u^{k-1})` measured on the step's transport path.
    pub w_step: f64,
    pub info: StepInfo,
}

impl JkoState {
    pub fn initial(u: DensityField, v: DensityField, params: &ModelParams) -> Self {
        let e = energy(&u, &v, params);
        JkoState {
            u,
            v,
            k: 0,
            f_tau_value: e,
            w_step: 0.0,
            info: StepInfo::default(),
        }
    }
}

/// Per-step diagnostics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub energy: f64,
    pub f_tau: f64,
    pub w_step: f64,
    pub mass: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub sweeps: usize,
    pub inner_iterations: usize,
    pub method: String,
}

/// Piecewise-constant JKO interpolant: `states[k]` holds on `((k-1) tau, k tau]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tau: f64,
    pub params: ModelParams,
    pub controls: JkoControls,
    pub regime: RegimeLabel,
    pub states: Vec<JkoState>,
    pub records: Vec<StepRecord>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
}

fn record(state: &JkoState, tau: f64, params: &ModelParams) -> StepRecord {
    StepRecord {
        k: state.k,
        t: state.k as f64 * tau,
        energy: energy(&state.u, &state.v, params),
        f_tau: state.f_tau_value,
        w_step: state.w_step,
        mass: state.u.mass(),
        min_u: state.u.min(),
        min_v: state.v.min(),
        sweeps: state.info.sweeps,
        inner_iterations: state.info.inner_iterations,
        method: state.info.method.clone(),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParams(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// `F_tau(u, v)` relative to `prev`. `w_value` is `W_m(u, prev.u)`; when
/// absent it is computed with [`solve_distance`].
pub fn f_tau(
    u: &DensityField,
    v: &DensityField,
    prev: &JkoState,
    tau: f64,
    params: &ModelParams,
    w_value: Option<f64>,
) -> Result<f64> {
    check_tau(tau)?;
    u.grid().check_same(prev.u.grid())?;
    v.grid().check_same(prev.v.grid())?;
    let w = match w_value {
        Some(w) => w,
        None => {
            solve_distance(&prev.u, u, &params.mobility(), &DistanceOptions::default())
                .or_else(|e| e.into_best_distance())?
                .value
        }
    };
    Ok(f_tau_from_parts(u, v, prev, tau, params, w * w))
}

fn f_tau_from_parts(
    u: &DensityField,
    v: &DensityField,
    prev: &JkoState,
    tau: f64,
    params: &ModelParams,
    w2: f64,
) -> f64 {
    let dv = v.sub(&prev.v);
    (w2 / params.chi + dv.inner(&dv)) / (2.0 * tau) + energy(u, v, params)
}

/// Exact minimizer of `F_tau` in `v` for fixed `u`:
/// `((1 + 1/tau) I - Lap) v = v_prev / tau + u`, with `|v|` taken if
/// rounding leaves negative cells.
pub fn v_step(u: &DensityField, v_prev: &DensityField, tau: f64) -> Result<DensityField> {
    check_tau(tau)?;
    u.grid().check_same(v_prev.grid())?;
    let rhs = v_prev.zip_with(u, |a, b| a / tau + b);
    let opts = EllipticOptions {
        tol: 1e-13,
        max_iter: None,
    };
    let v = solve_elliptic(Coefficient::Constant(1.0), 1.0 + 1.0 / tau, &rhs, &opts)?;
    Ok(if v.min() < -1e-12 { v.map(f64::abs) } else { v })
}

/// Outcome of the transport block.
#[derive(Debug, Clone)]
pub struct UStep {
    pub u: DensityField,
    pub path: TransportPath,
    /// Discrete action of `path`, i.e. `W_m(u, u_prev)^2` at this resolution.
    pub action: f64,
    pub iterations: usize,
    pub method: &'static str,
    /// Final relative gradient norm (Newton) or primal-dual gap.
    pub residual: f64,
}

/// Minimizes `action / (2 tau chi) + c ||u||_q^q - <u, v>` over discrete
/// paths starting at `u_prev` with free endpoint. Newton on the momenta
/// first; the primal-dual splitting if Newton stalls at the positivity
/// boundary.
pub fn u_step(
    u_prev: &DensityField,
    v: &DensityField,
    tau: f64,
    params: &ModelParams,
    controls: &JkoControls,
) -> Result<UStep> {
    u_step_warm(u_prev, v, tau, params, controls, None)
}

fn u_step_warm(
    u_prev: &DensityField,
    v: &DensityField,
    tau: f64,
    params: &ModelParams,
    controls: &JkoControls,
    warm: Option<&TransportPath>,
) -> Result<UStep> {
    check_tau(tau)?;
    params.validate()?;
    u_prev.grid().check_same(v.grid())?;
    if controls.n_t == 0 {
        return Err(Error::InvalidParams("n_t must be >= 1".into()));
    }
    let grid = *u_prev.grid();
    let st = SpaceTime::new(grid, controls.n_t, true);
    let problem = FreeEnd {
        st: &st,
        mob: params.mobility(),
        rho0: u_prev.values(),
        end: EndTerm {
            kappa: 2.0 * tau * params.chi / st.dt,
            coef: params.energy_coefficient(),
            q: params.energy_exponent(),
            v: v.values(),
        },
    };
    let warm_flat = warm
        .filter(|p| p.n_t == controls.n_t && p.grid == grid)
        .map(|p| p.to_flat(&st));
    let m0 = warm_flat
        .as_ref()
        .map_or_else(|| vec![0.0; st.n_slots()], |(_, m)| m.clone());
    let sol = match problem.newton(m0, controls.newton_tol, controls.max_newton) {
        Some(s) => s,
        None => problem.primal_dual(
            warm_flat.as_ref().map(|(r, m)| (r.as_slice(), m.as_slice())),
            controls.pd_max_iter,
            controls.pd_tol,
        )?,
    };
    let path = TransportPath::from_flat(&st, &sol.rho, &sol.mom);
    let u = path.rho[controls.n_t].clone();
    Ok(UStep {
        u,
        path,
        action: sol.action_sum * st.slot_weight(),
        iterations: sol.iterations,
        method: sol.method,
        residual: sol.residual,
    })
}

/// One minimizing-movement step by block alternation from `(prev.u, prev.v)`.
/// Fails with [`Error::StepRejected`] if the result does not beat the
/// stay-put competitor `F_tau(prev) = E(prev)`.
pub fn jko_step(
    prev: &JkoState,
    tau: f64,
    params: &ModelParams,
    controls: &JkoControls,
) -> Result<JkoState> {
    check_tau(tau)?;
    let stay = energy(&prev.u, &prev.v, params);
    let mut u = prev.u.clone();
    let mut v = prev.v.clone();
    let mut w2 = 0.0;
    let mut path: Option<TransportPath> = None;
    let mut f = stay;
    let mut sweeps = 0;
    let mut iterations = 0;
    let mut method = "none";
    for _ in 0..controls.max_sweeps.max(1) {
        sweeps += 1;
        let cand = u_step_warm(&prev.u, &v, tau, params, controls, path.as_ref())?;
        iterations += cand.iterations;
        let f_u = f_tau_from_parts(&cand.u, &v, prev, tau, params, cand.action);
        // the current iterate is a competitor of the u-block, so only a
        // decrease is accepted
        if f_u <= f + 1e-14 * f.abs().max(1.0) {
            u = cand.u;
            w2 = cand.action;
            path = Some(cand.path);
            method = cand.method;
        }
        v = v_step(&u, &prev.v, tau)?;
        let f_new = f_tau_from_parts(&u, &v, prev, tau, params, w2);
        let change = (f - f_new).abs() / f_new.abs().max(1.0);
        f = f_new;
        if change <= controls.sweep_tol {
            break;
        }
    }
    if f > stay + controls.accept_tol {
        return Err(Error::StepRejected {
            step: prev.k + 1,
            f_tau: f,
            stay,
        });
    }
    Ok(JkoState {
        u,
        v,
        k: prev.k + 1,
        f_tau_value: f,
        w_step: w2.sqrt(),
        info: StepInfo {
            sweeps,
            inner_iterations: iterations,
            method: method.to_string(),
        },
    })
}

/// `ceil(t_end / tau)` steps from `(u0, v0)`. A rejected step ends the run
/// early with the partial trajectory and the reason in `aborted`.
pub fn run_trajectory(
    u0: &DensityField,
    v0: &DensityField,
    tau: f64,
    t_end: f64,
    params: &ModelParams,
    controls: &JkoControls,
) -> Result<Trajectory> {
    check_tau(tau)?;
    params.validate()?;
    u0.grid().check_same(v0.grid())?;
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParams(format!("t_end must be >= 0, got {t_end}")));
    }
    if !u0.is_probability(1e-8) {
        return Err(Error::InvalidParams(format!(
            "initial density must be a probability field (mass {}, min {})",
            u0.mass(),
            u0.min()
        )));
    }
    if v0.min() < 0.0 {
        return Err(Error::InvalidParams("initial v must be nonnegative".into()));
    }
    let steps = (t_end / tau - 1e-9).ceil().max(0.0) as usize;
    let first = JkoState::initial(u0.clone(), v0.clone(), params);
    let mut traj = Trajectory {
        tau,
        params: *params,
        controls: *controls,
        regime: classify_regime(params),
        records: vec![record(&first, tau, params)],
        states: vec![first],
        aborted: None,
    };
    for _ in 0..steps {
        let prev = traj.states.last().expect("initial state present");
        match jko_step(prev, tau, params, controls) {
            Ok(next) => {
                traj.records.push(record(&next, tau, params));
                traj.states.push(next);
            }
            Err(e @ Error::StepRejected { .. }) => {
                traj.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.k as f64 * self.tau).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.k as f64 * self.tau)
    }

    pub fn snapshots(&self) -> SnapshotSeries {
        let mut s = SnapshotSeries::new(*self.states[0].u.grid());
        for st in &self.states {
            s.push(st.k as f64 * self.tau, st.u.clone(), st.v.clone());
        }
        s
    }

    /// Index of the interpolant value at time `t`: `k` with `t in ((k-1) tau, k tau]`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.tau - 1e-9).ceil().max(0.0) as usize;
        k.min(self.states.len() - 1)
    }

    fn meta(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("tau".into(), Value::from(self.tau));
        m.insert("params".into(), serde_json::to_value(self.params).expect("params"));
        m.insert("controls".into(), serde_json::to_value(self.controls).expect("controls"));
        m.insert("regime".into(), serde_json::to_value(self.regime).expect("regime"));
        m.insert("records".into(), serde_json::to_value(&self.records).expect("records"));
        m.insert(
            "aborted".into(),
            self.aborted.clone().map_or(Value::Null, Value::from),
        );
        m
    }

    /// Writes the trajectory directory; `extra` entries are merged into
    /// the manifest.
    pub fn save(&self, dir: &Path, extra: Map<String, Value>) -> Result<()> {
        self.save_strided(dir, 1, extra)
    }

    /// Like [`Trajectory::save`] but writes fields only for every
    /// `stride`-th state (and the last); the step table stays complete.
    pub fn save_strided(&self, dir: &Path, stride: usize, extra: Map<String, Value>) -> Result<()> {
        let stride = stride.max(1);
        let mut meta = self.meta();
        meta.extend(extra);
        let mut s = SnapshotSeries::new(*self.states[0].u.grid());
        let last = self.states.len() - 1;
        for (i, st) in self.states.iter().enumerate() {
            if i % stride == 0 || i == last {
                s.push(st.k as f64 * self.tau, st.u.clone(), st.v.clone());
            }
        }
        write_snapshots(dir, "jko", &s, meta)
    }

    pub fn load(dir: &Path) -> Result<Trajectory> {
        let (series, manifest) = read_snapshots(dir)?;
        let bad = |msg: &str| Error::Parse {
            path: dir.join("manifest.json"),
            msg: msg.to_string(),
        };
        if manifest.kind != "jko" {
            return Err(bad("not a jko trajectory"));
        }
        fn field<T: serde::de::DeserializeOwned>(
            extra: &Map<String, Value>,
            key: &str,
            bad: &dyn Fn(&str) -> Error,
        ) -> Result<T> {
            let v = extra.get(key).cloned().ok_or_else(|| bad(&format!("missing {key}")))?;
            serde_json::from_value(v).map_err(|e| bad(&format!("{key}: {e}")))
        }
        let x = &manifest.extra;
        let tau: f64 = field(x, "tau", &bad)?;
        let params: ModelParams = field(x, "params", &bad)?;
        let controls: JkoControls = field(x, "controls", &bad)?;
        let regime: RegimeLabel = field(x, "regime", &bad)?;
        let records: Vec<StepRecord> = field(x, "records", &bad)?;
        let aborted: Option<String> = field(x, "aborted", &bad)?;
        let states = series
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let k = (t / tau).round() as usize;
                let rec = records.iter().find(|r| r.k == k);
                JkoState {
                    u: series.u[i].clone(),
                    v: series.v[i].clone(),
                    k,
                    f_tau_value: rec.map_or(f64::NAN, |r| r.f_tau),
                    w_step: rec.map_or(f64::NAN, |r| r.w_step),
                    info: rec.map_or_else(StepInfo::default, |r| StepInfo {
                        sweeps: r.sweeps,
                        inner_iterations: r.inner_iterations,
                        method: r.method.clone(),
                    }),
                }
            })
            .collect();
        Ok(Trajectory {
            tau,
            params,
            controls,
            regime,
            states,
            records,
            aborted,
        })
    }
}
