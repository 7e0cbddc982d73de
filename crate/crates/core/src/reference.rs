//! Direct finite-volume solvers used as oracles: the Keller–Segel system
//! (explicit nonlinear diffusion and upwinded chemotaxis for `u`, implicit
//! `v`) and the auxiliary flow `w_t = delta Lap w + div(m(w) grad phi)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    implicit_diffusion, solve_elliptic_from, Coefficient, DensityField, EllipticOptions,
    FaceLink, Grid,
};
use crate::model::{Mobility, ModelParams};
use crate::snapshots::SnapshotSeries;

/// Fraction of the explicit stability limit used by the CFL bound.
pub const CFL_SAFETY: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct FvState {
    pub u: DensityField,
    pub v: DensityField,
    pub t: f64,
    pub dt_last: f64,
}

impl FvState {
    pub fn new(u: DensityField, v: DensityField) -> Self {
        FvState {
            u,
            v,
            t: 0.0,
            dt_last: 0.0,
        }
    }
}

/// `1 / sum_a h_a^-2`: the squared mesh size in the explicit diffusion
/// limit (equals `h^2` in one dimension).
fn h2_eff(g: &Grid) -> f64 {
    1.0 / (0..g.dim()).map(|a| 1.0 / (g.h(a) * g.h(a))).sum::<f64>()
}

fn h_min(g: &Grid) -> f64 {
    (0..g.dim()).map(|a| g.h(a)).fold(f64::INFINITY, f64::min)
}

struct Fluxes {
    links: Vec<FaceLink>,
    /// Left-to-right flux through each interior face.
    flux: Vec<f64>,
    max_diffusivity: f64,
    max_grad_v: f64,
}

/// Keller–Segel face fluxes. Regularized: `-p/(p-a) m_eps(u_f) grad u^(p-a)
/// + chi m_eps(u_up) grad v`; otherwise `-grad u^p + chi u_up^a grad v`.
fn ks_fluxes(u: &DensityField, v: &DensityField, params: &ModelParams, regularized: bool) -> Fluxes {
    let g = u.grid();
    let links = g.interior_faces();
    let (p, a) = (params.p, params.alpha);
    let mob = if regularized {
        params.mobility()
    } else {
        Mobility::Power { alpha: a, eps: 0.0 }
    };
    let uv = u.values();
    let vv = v.values();
    let mut flux = Vec::with_capacity(links.len());
    let mut max_d = 0.0f64;
    let mut max_gv = 0.0f64;
    for l in &links {
        let h = g.h(l.axis);
        let (ul, ur) = (uv[l.left].max(0.0), uv[l.right].max(0.0));
        // diffusive part and its secant diffusivity
        let (fd, diff) = if regularized {
            let mf = mob.value(0.5 * (ul + ur));
            let c = p / (p - a);
            let (pl, pr) = (ul.powf(p - a), ur.powf(p - a));
            let secant = if ur != ul {
                (pr - pl) / (ur - ul)
            } else if ul > 0.0 {
                (p - a) * ul.powf(p - a - 1.0)
            } else {
                0.0
            };
            (-c * mf * (pr - pl) / h, c * mf * secant)
        } else {
            let (pl, pr) = (ul.powf(p), ur.powf(p));
            let secant = if ur != ul {
                (pr - pl) / (ur - ul)
            } else if ul > 0.0 || p == 1.0 {
                p * ul.powf(p - 1.0)
            } else {
                0.0
            };
            (-(pr - pl) / h, secant)
        };
        let gv = (vv[l.right] - vv[l.left]) / h;
        let donor = if gv > 0.0 { ul } else { ur };
        let fc = params.chi * mob.value(donor) * gv;
        flux.push(fd + fc);
        max_d = max_d.max(diff);
        max_gv = max_gv.max(gv.abs());
    }
    Fluxes {
        links,
        flux,
        max_diffusivity: max_d,
        max_grad_v: max_gv,
    }
}

/// Applies face fluxes explicitly, scaling each donor cell's outflow so
/// that no cell is emptied below zero. Mass is conserved exactly.
fn apply_fluxes(u: &DensityField, links: &[FaceLink], flux: &[f64], dt: f64) -> DensityField {
    let g = u.grid();
    let uv = u.values();
    let mut outflow = vec![0.0; uv.len()];
    for (l, &f) in links.iter().zip(flux) {
        let amount = dt * f.abs() / g.h(l.axis);
        if f > 0.0 {
            outflow[l.left] += amount;
        } else {
            outflow[l.right] += amount;
        }
    }
    let limit: Vec<f64> = uv
        .iter()
        .zip(&outflow)
        .map(|(&u, &o)| if o > u.max(0.0) { u.max(0.0) / o } else { 1.0 })
        .collect();
    let mut out = uv.to_vec();
    for (l, &f) in links.iter().zip(flux) {
        let donor = if f > 0.0 { l.left } else { l.right };
        let amount = dt * f * limit[donor] / g.h(l.axis);
        out[l.left] -= amount;
        out[l.right] += amount;
    }
    for x in &mut out {
        if *x < 0.0 && *x >= -1e-12 {
            *x = 0.0;
        }
    }
    DensityField::new(*g, out).expect("finite update")
}

/// Largest stable explicit step for the current state.
pub fn cfl_bound(state: &FvState, params: &ModelParams, regularized: bool) -> f64 {
    let f = ks_fluxes(&state.u, &state.v, params, regularized);
    let g = state.u.grid();
    let denom = f.max_diffusivity + params.chi * f.max_grad_v * h_min(g);
    if denom > 0.0 {
        CFL_SAFETY * h2_eff(g) / denom
    } else {
        f64::INFINITY
    }
}

/// One step: explicit finite-volume update of `u`, then
/// `((1 + 1/dt) I - Lap) v_new = v / dt + u_new`.
pub fn fv_step(state: &FvState, dt: f64, params: &ModelParams, regularized: bool) -> Result<FvState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    state.u.grid().check_same(state.v.grid())?;
    let f = ks_fluxes(&state.u, &state.v, params, regularized);
    let g = state.u.grid();
    let denom = f.max_diffusivity + params.chi * f.max_grad_v * h_min(g);
    let bound = if denom > 0.0 {
        CFL_SAFETY * h2_eff(g) / denom
    } else {
        f64::INFINITY
    };
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    let u = apply_fluxes(&state.u, &f.links, &f.flux, dt);
    let rhs = state.v.zip_with(&u, |v, u| v / dt + u);
    let opts = EllipticOptions {
        tol: 1e-13,
        max_iter: None,
    };
    let v = solve_elliptic_from(
        Coefficient::Constant(1.0),
        1.0 + 1.0 / dt,
        &rhs,
        Some(state.v.values()),
        &opts,
    )?;
    Ok(FvState {
        u,
        v,
        t: state.t + dt,
        dt_last: dt,
    })
}

/// Time-step rule of [`run_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeStep {
    Fixed { dt: f64 },
    /// `fraction` of the CFL bound, re-evaluated every step.
    Cfl { fraction: f64 },
}

#[derive(Debug, Clone)]
pub struct ReferenceRun {
    /// States at `t = 0, every, 2 every, ...` (and the abort time, if any).
    pub snapshots: Vec<FvState>,
    pub steps: usize,
    pub aborted: Option<String>,
}

impl ReferenceRun {
    pub fn series(&self) -> SnapshotSeries {
        let mut s = SnapshotSeries::new(*self.snapshots[0].u.grid());
        for st in &self.snapshots {
            s.push(st.t, st.u.clone(), st.v.clone());
        }
        s
    }
}

/// Integrates to `t_end`, landing exactly on every multiple of `every`.
/// A CFL violation ends the run with the snapshots gathered so far (the
/// violating state is recorded as the last snapshot).
pub fn run_reference(
    u0: &DensityField,
    v0: &DensityField,
    step: TimeStep,
    t_end: f64,
    every: f64,
    params: &ModelParams,
    regularized: bool,
) -> Result<ReferenceRun> {
    u0.grid().check_same(v0.grid())?;
    if !(t_end >= 0.0) || !(every > 0.0) {
        return Err(Error::InvalidParams(format!(
            "need t_end >= 0 and snapshot interval > 0 (got {t_end}, {every})"
        )));
    }
    match step {
        TimeStep::Fixed { dt } if !(dt > 0.0) => {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")))
        }
        TimeStep::Cfl { fraction } if !(fraction > 0.0 && fraction <= 1.0) => {
            return Err(Error::InvalidParams(format!(
                "CFL fraction must lie in (0, 1], got {fraction}"
            )))
        }
        _ => {}
    }
    let mut state = FvState::new(u0.clone(), v0.clone());
    let mut run = ReferenceRun {
        snapshots: vec![state.clone()],
        steps: 0,
        aborted: None,
    };
    let n_snap = (t_end / every - 1e-9).ceil().max(0.0) as usize;
    for s in 1..=n_snap {
        let target = (s as f64 * every).min(t_end);
        while target - state.t > 1e-12 * target.max(1.0) {
            let remaining = target - state.t;
            let dt = match step {
                TimeStep::Fixed { dt } => dt,
                TimeStep::Cfl { fraction } => {
                    let b = cfl_bound(&state, params, regularized);
                    // equal substeps up to the next snapshot
                    let n = (remaining / (fraction * b)).ceil().max(1.0);
                    remaining / n
                }
            };
            let dt = dt.min(remaining);
            match fv_step(&state, dt, params, regularized) {
                Ok(next) => {
                    state = next;
                    run.steps += 1;
                }
                Err(e @ Error::CflViolation { .. }) => {
                    run.aborted = Some(e.to_string());
                    run.snapshots.push(state);
                    return Ok(run);
                }
                Err(e) => return Err(e),
            }
        }
        state.t = target;
        run.snapshots.push(state.clone());
    }
    Ok(run)
}

/// One step of `w_t = delta Lap w + div(m_eps(w) grad phi)`: explicit
/// upwinded drift followed by backward-Euler diffusion.
pub fn aux_flow_step(
    w: &DensityField,
    phi: &DensityField,
    dt: f64,
    params: &ModelParams,
) -> Result<DensityField> {
    w.grid().check_same(phi.grid())?;
    if params.eps == 0.0 {
        return Err(Error::SingularMobility);
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let g = w.grid();
    let mob = params.mobility();
    let links = g.interior_faces();
    let (wv, pv) = (w.values(), phi.values());
    let mut flux = Vec::with_capacity(links.len());
    let mut max_gp = 0.0f64;
    for l in &links {
        let gp = (pv[l.right] - pv[l.left]) / g.h(l.axis);
        // transport along -grad phi
        let donor = if gp > 0.0 { wv[l.right] } else { wv[l.left] };
        flux.push(-mob.value(donor.max(0.0)) * gp);
        max_gp = max_gp.max(gp.abs());
    }
    let lip = params.alpha * params.eps.powf(params.alpha - 1.0);
    if max_gp > 0.0 {
        let bound = CFL_SAFETY * h_min(g) / (max_gp * lip);
        if dt > bound {
            return Err(Error::CflViolation { dt, bound });
        }
    }
    let drifted = if max_gp > 0.0 {
        apply_fluxes(w, &links, &flux, dt)
    } else {
        w.clone()
    };
    let mut out = implicit_diffusion(&drifted, params.delta, dt, &EllipticOptions::default())?;
    for x in out.values_mut() {
        if *x < 0.0 && *x >= -1e-12 {
            *x = 0.0;
        }
    }
    Ok(out)
}
