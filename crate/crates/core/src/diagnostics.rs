//! Measurable forms of the scheme's a priori estimates and weak
//! formulations, evaluated on JKO trajectories or reference runs.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    discrete_gradient, discrete_laplacian, field_norm, DensityField, FaceField, NormKind,
};
use crate::jko::Trajectory;
use crate::model::{energy, energy_norm, ModelParams};
use crate::snapshots::SnapshotSeries;
use crate::transport::{solve_distance, DistanceOptions};

/// Every pass/fail threshold used by the diagnostics and the acceptance
/// checks built on them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Largest tolerated `E_k - E_{k-1}`.
    pub energy_increase: f64,
    /// Largest tolerated `|mass_k - mass_0|`.
    pub mass_error: f64,
    /// Smallest tolerated `min u`.
    pub min_u: f64,
    /// Largest tolerated v-equation weak residual.
    pub v_residual: f64,
    /// Allowed spread (max/min) of fitted constants under refinement.
    pub refinement_band: f64,
    /// Accepted range of the u-residual ratio under simultaneous halving
    /// of `tau` and `h`.
    pub residual_ratio: (f64, f64),
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            energy_increase: 1e-8,
            mass_error: 1e-8,
            min_u: -1e-10,
            v_residual: 1e-6,
            refinement_band: 2.0,
            residual_ratio: (1.4, 3.0),
        }
    }
}

/// Common view of a JKO trajectory or reference run: snapshots at
/// increasing times, read as a piecewise-constant interpolant
/// (`u(t) = u_k` on `(t_{k-1}, t_k]`).
#[derive(Debug, Clone)]
pub struct RunData {
    pub series: SnapshotSeries,
    pub params: ModelParams,
    /// Time step entering the `sqrt(tau)` term of the equi-continuity fit.
    pub tau: f64,
    /// Energy per snapshot (the step ledger for JKO runs).
    pub energies: Vec<f64>,
    /// `W_m` step distance per snapshot (NaN where unknown).
    pub w_step: Vec<f64>,
}

impl RunData {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        RunData {
            series: traj.snapshots(),
            params: traj.params,
            tau: traj.tau,
            energies: traj.states.iter().map(|s| energy(&s.u, &s.v, &traj.params)).collect(),
            w_step: traj.states.iter().map(|s| s.w_step).collect(),
        }
    }

    /// Wraps reference snapshots; `tau` is taken as the largest snapshot gap.
    pub fn from_series(series: SnapshotSeries, params: ModelParams) -> Self {
        let tau = series
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max);
        let energies = series
            .u
            .iter()
            .zip(&series.v)
            .map(|(u, v)| energy(u, v, &params))
            .collect();
        let w_step = vec![f64::NAN; series.len()];
        RunData {
            series,
            params,
            tau,
            energies,
            w_step,
        }
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Snapshot index holding at time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let slack = 1e-9 * t.abs().max(1.0);
        self.series
            .times
            .iter()
            .position(|&s| s >= t - slack)
            .unwrap_or(self.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub pass: bool,
    /// `max_k (E_k - E_{k-1})`, 0 for a single snapshot.
    pub worst_increase: f64,
    pub worst_step: usize,
}

pub fn check_energy_monotone(run: &RunData, th: &Thresholds) -> EnergyCheck {
    let mut worst = (0.0, 0);
    for (k, w) in run.energies.windows(2).enumerate() {
        let inc = w[1] - w[0];
        if inc > worst.0 || inc.is_nan() {
            worst = (inc, k + 1);
        }
    }
    EnergyCheck {
        pass: worst.0 <= th.energy_increase,
        worst_increase: worst.0,
        worst_step: worst.1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationCheck {
    pub pass: bool,
    pub max_mass_error: f64,
    pub min_u: f64,
}

/// Mass is measured against the initial snapshot (unit for probability data).
pub fn check_conservation(run: &RunData, th: &Thresholds) -> ConservationCheck {
    let m0 = run.series.u.first().map_or(0.0, DensityField::mass);
    let mut max_err: f64 = 0.0;
    let mut min_u = f64::INFINITY;
    for u in &run.series.u {
        max_err = max_err.max((u.mass() - m0).abs());
        min_u = min_u.min(u.min());
    }
    ConservationCheck {
        pass: max_err <= th.mass_error && min_u >= th.min_u,
        max_mass_error: max_err,
        min_u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFit {
    pub t: f64,
    pub s: f64,
    pub distance: f64,
    pub ratio: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquicontinuityFit {
    pub c4: f64,
    pub pairs: Vec<PairFit>,
}

/// `n` pairs `(t, s)` spread over `(0, t_end]`, mixing short and long gaps.
pub fn default_sample_pairs(t_end: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let f = (i + 1) as f64 / n as f64;
            let t = t_end * f;
            let s = if i % 2 == 0 { 0.0 } else { t * 0.5 };
            (t, s)
        })
        .collect()
}

/// `C4 = max W_m(u(t), u(s)) / (sqrt|t - s| + sqrt(tau))` over the pairs.
/// Distance solves that reach their iteration cap contribute their best
/// iterate and are flagged unconverged.
pub fn equicontinuity_fit(
    run: &RunData,
    pairs: &[(f64, f64)],
    opts: &DistanceOptions,
) -> Result<EquicontinuityFit> {
    if pairs.len() < 5 {
        return Err(Error::InvalidParams(format!(
            "equi-continuity fit needs at least 5 pairs, got {}",
            pairs.len()
        )));
    }
    if run.is_empty() {
        return Err(Error::InvalidParams("empty run".into()));
    }
    let mob = run.params.mobility();
    let fits = pairs
        .iter()
        .map(|&(t, s)| {
            let (a, b) = (&run.series.u[run.index_at(t)], &run.series.u[run.index_at(s)]);
            let d = match solve_distance(a, b, &mob, opts) {
                Ok(d) => d,
                Err(e) => e.into_best_distance()?,
            };
            let denom = (t - s).abs().sqrt() + run.tau.sqrt();
            Ok(PairFit {
                t,
                s,
                distance: d.value,
                ratio: if denom > 0.0 { d.value / denom } else { 0.0 },
                converged: d.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let c4 = fits.iter().map(|p| p.ratio).fold(0.0, f64::max);
    Ok(EquicontinuityFit { c4, pairs: fits })
}

/// `q = 4 / (3 alpha + 1 - p)`.
pub fn gradient_exponent(params: &ModelParams) -> Result<f64> {
    let d = 3.0 * params.alpha + 1.0 - params.p;
    if d <= 0.0 {
        return Err(Error::BadExponent(format!(
            "3 alpha + 1 - p = {d} must be positive"
        )));
    }
    Ok(4.0 / d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub k: usize,
    pub t: f64,
    pub energy: f64,
    pub mass: f64,
    pub min_u: f64,
    /// `||u||_{p+1-alpha}`.
    pub u_norm: f64,
    pub v_h1: f64,
    pub v_h2: f64,
    /// `||grad u^{(p+1-alpha)/2}||^2`.
    pub grad_power_sq: f64,
    /// `||Lap v - v + u||^2`.
    pub v_defect_sq: f64,
    /// `||grad (u + eps)^alpha||_q`.
    pub grad_mobility_q: f64,
    pub w_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriNorms {
    pub q: f64,
    pub rows: Vec<NormRow>,
    /// `sup_t (||u||^{p+1-alpha}_{p+1-alpha} + ||v||^2_{H1})`.
    pub c1: f64,
    /// Time integrals over the interpolant of the first-order quantities.
    pub int_grad_power_sq: f64,
    pub int_v_defect_sq: f64,
    pub int_v_h2_sq: f64,
    pub int_grad_mobility_q: f64,
    /// Every tabulated value is finite.
    pub bounded: bool,
}

fn face_lq(f: &FaceField, q: f64) -> f64 {
    let g = f.grid();
    let s: f64 = (0..g.dim())
        .map(|a| f.axis(a).iter().map(|x| x.abs().powf(q)).sum::<f64>())
        .sum();
    (s * g.cell_volume()).powf(1.0 / q)
}

pub fn apriori_norms(run: &RunData) -> Result<AprioriNorms> {
    let pm = &run.params;
    let q = gradient_exponent(pm)?;
    let r = pm.energy_exponent();
    let mob = pm.mobility();
    let s = &run.series;
    let rows: Vec<NormRow> = (0..s.len())
        .into_par_iter()
        .map(|k| {
            let (u, v) = (&s.u[k], &s.v[k]);
            let gp = discrete_gradient(&u.map(|x| x.max(0.0).powf(0.5 * r)));
            let defect = discrete_laplacian(v).sub(v).add(u);
            let gm = discrete_gradient(&u.map(|x| mob.value(x.max(0.0))));
            NormRow {
                k,
                t: s.times[k],
                energy: run.energies[k],
                mass: u.mass(),
                min_u: u.min(),
                u_norm: energy_norm(u, pm),
                v_h1: field_norm(v, NormKind::H1).expect("H1"),
                v_h2: field_norm(v, NormKind::H2).expect("H2"),
                grad_power_sq: gp.inner(&gp),
                v_defect_sq: defect.inner(&defect),
                grad_mobility_q: face_lq(&gm, q),
                w_step: run.w_step[k],
            }
        })
        .collect();
    let mut out = AprioriNorms {
        q,
        c1: 0.0,
        int_grad_power_sq: 0.0,
        int_v_defect_sq: 0.0,
        int_v_h2_sq: 0.0,
        int_grad_mobility_q: 0.0,
        bounded: true,
        rows,
    };
    for (k, row) in out.rows.iter().enumerate() {
        out.c1 = out.c1.max(row.u_norm.powf(r) + row.v_h1 * row.v_h1);
        if k > 0 {
            let dt = s.times[k] - s.times[k - 1];
            out.int_grad_power_sq += dt * row.grad_power_sq;
            out.int_v_defect_sq += dt * row.v_defect_sq;
            out.int_v_h2_sq += dt * row.v_h2 * row.v_h2;
            out.int_grad_mobility_q += dt * row.grad_mobility_q.powf(q);
        }
        let vals = [
            row.energy,
            row.u_norm,
            row.v_h1,
            row.v_h2,
            row.grad_power_sq,
            row.v_defect_sq,
            row.grad_mobility_q,
        ];
        out.bounded &= vals.iter().all(|v| v.is_finite());
    }
    Ok(out)
}

/// Neumann cosine test function `prod_a cos(k_a pi x_a / L_a)` at cell centres.
pub fn cosine_mode(grid: &crate::grid::Grid, kx: usize, ky: usize) -> DensityField {
    let (lx, ly) = (grid.extent(0), if grid.dim() > 1 { grid.extent(1) } else { 1.0 });
    let pi = std::f64::consts::PI;
    DensityField::from_fn(*grid, |x, y| {
        (kx as f64 * pi * x / lx).cos() * (ky as f64 * pi * y / ly).cos()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeResidual {
    pub kx: usize,
    pub ky: usize,
    pub u_residual: f64,
    pub v_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakResidual {
    pub modes: Vec<ModeResidual>,
    pub max_u: f64,
    pub max_v: f64,
}

/// Weak-formulation residuals per cosine test function, with the
/// interpolant value `u_k` used on `(t_{k-1}, t_k]`:
///
/// * u: `|sum_k dt_k (J_k, grad phi) - (u_0 - u_K, phi)|` with flux
///   `J = p/(p-a) m_eps(u) grad u^{p-a} - chi m_eps(u) grad v`
///   (`m_eps` at the face mean of `u`);
/// * v: `|(v_K - v_0, z) + sum_k dt_k [(grad v_k, grad z) + (v_k - u_k, z)]|`.
pub fn weak_residual(run: &RunData, max_mode: usize) -> WeakResidual {
    let s = &run.series;
    let pm = &run.params;
    let g = s.grid;
    let ky_max = if g.dim() > 1 { max_mode } else { 0 };
    let modes: Vec<(usize, usize)> = (0..=ky_max)
        .flat_map(|ky| (0..=max_mode).map(move |kx| (kx, ky)))
        .collect();
    let mob = pm.mobility();
    let c = pm.p / (pm.p - pm.alpha);
    let links = g.interior_faces();
    // flux and v-gradient per step, shared by all test functions
    let per_step: Vec<(FaceField, FaceField)> = (1..s.len())
        .into_par_iter()
        .map(|k| {
            let (u, v) = (&s.u[k], &s.v[k]);
            let gp = discrete_gradient(&u.map(|x| x.max(0.0).powf(pm.p - pm.alpha)));
            let gv = discrete_gradient(v);
            let mut j = FaceField::zeros(g);
            for l in &links {
                let mf = mob.value(0.5 * (u.values()[l.left] + u.values()[l.right]).max(0.0));
                j.set(l, mf * (c * gp.get(l) - pm.chi * gv.get(l)));
            }
            (j, gv)
        })
        .collect();
    let residuals: Vec<ModeResidual> = modes
        .par_iter()
        .map(|&(kx, ky)| {
            let phi = cosine_mode(&g, kx, ky);
            let gphi = discrete_gradient(&phi);
            let last = s.len() - 1;
            let mut lhs_u = 0.0;
            let mut v_sum = s.v[last].sub(&s.v[0]).inner(&phi);
            for k in 1..s.len() {
                let dt = s.times[k] - s.times[k - 1];
                let (j, gv) = &per_step[k - 1];
                lhs_u += dt * j.inner(&gphi);
                v_sum += dt * (gv.inner(&gphi) + s.v[k].sub(&s.u[k]).inner(&phi));
            }
            let rhs_u = s.u[0].sub(&s.u[last]).inner(&phi);
            ModeResidual {
                kx,
                ky,
                u_residual: (lhs_u - rhs_u).abs(),
                v_residual: v_sum.abs(),
            }
        })
        .collect();
    let max_u = residuals.iter().map(|r| r.u_residual).fold(0.0, f64::max);
    let max_v = residuals.iter().map(|r| r.v_residual).fold(0.0, f64::max);
    WeakResidual {
        modes: residuals,
        max_u,
        max_v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub t_other: f64,
    pub l1_u: f64,
    pub l2_u: f64,
    pub l1_v: f64,
    pub l2_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub max_l1_u: f64,
    pub max_l2_u: f64,
    pub max_l1_v: f64,
    pub max_l2_v: f64,
}

/// Discrepancies at every snapshot of `a` against the nearest-in-time
/// snapshot of `b`.
pub fn compare_trajectories(a: &SnapshotSeries, b: &SnapshotSeries) -> Result<Comparison> {
    a.grid.check_same(&b.grid)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParams("cannot compare empty runs".into()));
    }
    let norm = |x: &DensityField, y: &DensityField, q: f64| {
        field_norm(&x.sub(y), NormKind::Lq(q)).expect("q >= 1")
    };
    let rows: Vec<ComparisonRow> = a
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let j = b.nearest(t).expect("nonempty");
            ComparisonRow {
                t,
                t_other: b.times[j],
                l1_u: norm(&a.u[i], &b.u[j], 1.0),
                l2_u: norm(&a.u[i], &b.u[j], 2.0),
                l1_v: norm(&a.v[i], &b.v[j], 1.0),
                l2_v: norm(&a.v[i], &b.v[j], 2.0),
            }
        })
        .collect();
    let max = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    Ok(Comparison {
        max_l1_u: max(|r| r.l1_u),
        max_l2_u: max(|r| r.l2_u),
        max_l1_v: max(|r| r.l1_v),
        max_l2_v: max(|r| r.l2_v),
        rows,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,t_other,l1_u,l2_u,l1_v,l2_v\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t, r.t_other, r.l1_u, r.l2_u, r.l1_v, r.l2_v
            );
        }
        out
    }
}

/// Settings of [`diagnose`].
#[derive(Debug, Clone, Copy)]
pub struct DiagnoseOptions {
    pub thresholds: Thresholds,
    /// Highest cosine index per axis in the weak residuals.
    pub max_mode: usize,
    /// Number of `(t, s)` pairs for the equi-continuity fit; 0 skips it.
    pub equicontinuity_pairs: usize,
    pub distance: DistanceOptions,
}

impl Default for DiagnoseOptions {
    fn default() -> Self {
        DiagnoseOptions {
            thresholds: Thresholds::default(),
            max_mode: 3,
            equicontinuity_pairs: 0,
            distance: DistanceOptions {
                n_t: 8,
                tol: 1e-5,
                ..DistanceOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub thresholds: Thresholds,
    pub energy: EnergyCheck,
    pub conservation: ConservationCheck,
    pub norms: AprioriNorms,
    pub weak: WeakResidual,
    pub v_residual_pass: bool,
    pub equicontinuity: Option<EquicontinuityFit>,
    pub pass: bool,
}

/// Runs every diagnostic. The v-equation check applies only to JKO runs,
/// where the v-step solves the discrete equation exactly.
pub fn diagnose(run: &RunData, jko: bool, opts: &DiagnoseOptions) -> Result<DiagnosticsReport> {
    if run.is_empty() {
        return Err(Error::InvalidParams("empty run".into()));
    }
    let th = opts.thresholds;
    let energy = check_energy_monotone(run, &th);
    let conservation = check_conservation(run, &th);
    let norms = apriori_norms(run)?;
    let weak = weak_residual(run, opts.max_mode);
    let v_residual_pass = !jko || weak.max_v <= th.v_residual;
    let equicontinuity = if opts.equicontinuity_pairs > 0 {
        let t_end = *run.series.times.last().expect("nonempty");
        let pairs = default_sample_pairs(t_end, opts.equicontinuity_pairs.max(5));
        Some(equicontinuity_fit(run, &pairs, &opts.distance)?)
    } else {
        None
    };
    let pass = energy.pass
        && conservation.pass
        && v_residual_pass
        && norms.bounded
        && equicontinuity.as_ref().map_or(true, |e| e.c4.is_finite());
    Ok(DiagnosticsReport {
        thresholds: th,
        energy,
        conservation,
        norms,
        weak,
        v_residual_pass,
        equicontinuity,
        pass,
    })
}

impl DiagnosticsReport {
    pub fn norms_csv(&self) -> String {
        let mut out = String::from(
            "k,t,energy,mass,min_u,u_norm,v_h1,v_h2,grad_power_sq,v_defect_sq,grad_mobility_q,w_step\n",
        );
        for r in &self.norms.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.k,
                r.t,
                r.energy,
                r.mass,
                r.min_u,
                r.u_norm,
                r.v_h1,
                r.v_h2,
                r.grad_power_sq,
                r.v_defect_sq,
                r.grad_mobility_q,
                r.w_step
            );
        }
        out
    }

    pub fn residuals_csv(&self) -> String {
        let mut out = String::from("kx,ky,u_residual,v_residual\n");
        for m in &self.weak.modes {
            let _ = writeln!(out, "{},{},{},{}", m.kx, m.ky, m.u_residual, m.v_residual);
        }
        out
    }

    /// Writes `report.json`, `norms.csv` and `weak_residuals.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.json", serde_json::to_string_pretty(self).expect("report serializes")),
            ("norms.csv", self.norms_csv()),
            ("weak_residuals.csv", self.residuals_csv()),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
