//! Chambolle–Pock iteration for `min_{x in C} F(K x)` where `C` is the
//! discrete continuity constraint, `K x = (rho_bar, m[, rho_end])` and `F`
//! is the summed action density plus an optional terminal energy.

use rayon::prelude::*;

use super::prox::{monotone_root, prox_action_warm};
use super::spacetime::SpaceTime;
use crate::error::Result;
use crate::linalg::{dot, norm2};
use crate::model::Mobility;

/// Terminal term `kappa * sum_i (coef r_i^q - v_i r_i)` on the free end.
#[derive(Debug, Clone)]
pub(crate) struct EndTerm<'a> {
    pub kappa: f64,
    pub coef: f64,
    pub q: f64,
    pub v: &'a [f64],
}

impl EndTerm<'_> {
    pub fn value(&self, r: &[f64]) -> f64 {
        self.kappa
            * r.iter()
                .zip(self.v)
                .map(|(&r, &v)| self.coef * r.max(0.0).powf(self.q) - v * r)
                .sum::<f64>()
    }

    /// `argmin_{r >= 0} kappa (coef r^q - v r) + (r - r_tilde)^2 / (2 s)`.
    fn prox(&self, r_tilde: f64, v: f64, s: f64) -> Result<f64> {
        let k = self.kappa;
        let (c, q) = (self.coef, self.q);
        let slope = |r: f64| {
            let val = k * (c * q * r.powf(q - 1.0) - v) + (r - r_tilde) / s;
            let der = k * c * q * (q - 1.0) * r.powf(q - 2.0) + 1.0 / s;
            (val, der)
        };
        let hi = r_tilde + s * k * v;
        if hi <= 0.0 {
            return Ok(0.0);
        }
        if slope(0.0).0 >= 0.0 {
            return Ok(0.0);
        }
        monotone_root(slope, 0.0, hi)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CpSettings {
    pub max_iter: usize,
    pub tol: f64,
    /// `sigma / tau` ratio of the dual and primal steps.
    pub step_ratio: f64,
    pub check_every: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CpOutcome {
    pub rho: Vec<f64>,
    pub mom: Vec<f64>,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
    /// `sum_s m^2 / m(rho_bar)` at the prox output of the best iterate.
    pub action_sum: f64,
    /// Objective at the prox output, one entry per residual check.
    pub history: Vec<f64>,
}

/// `|m|^2 / mob(rho)` with the conventions `0/0 = 0` and `c/0 = inf`.
#[inline]
pub(crate) fn action_density(rho: f64, m: f64, mob: &Mobility) -> f64 {
    if m == 0.0 {
        return 0.0;
    }
    let mv = mob.value(rho.max(0.0));
    if mv > 0.0 {
        m * m / mv
    } else {
        f64::INFINITY
    }
}

struct Dual {
    yr: Vec<f64>,
    ym: Vec<f64>,
    ye: Vec<f64>,
}

fn apply_k(st: &SpaceTime, rho: &[f64], mom: &[f64], with_end: bool, out: &mut Dual) {
    st.average(rho, &mut out.yr);
    out.ym.copy_from_slice(mom);
    if with_end {
        out.ye.copy_from_slice(&rho[st.n_t * st.nc..]);
    }
}

fn apply_kt(st: &SpaceTime, y: &Dual, with_end: bool, rho: &mut [f64], mom: &mut [f64]) {
    rho.iter_mut().for_each(|v| *v = 0.0);
    st.average_adjoint(&y.yr, rho);
    mom.copy_from_slice(&y.ym);
    if with_end {
        let off = st.n_t * st.nc;
        for (r, e) in rho[off..].iter_mut().zip(&y.ye) {
            *r += e;
        }
    }
}

fn zero_fixed(st: &SpaceTime, rho: &mut [f64]) {
    let nc = st.nc;
    rho[..nc].iter_mut().for_each(|v| *v = 0.0);
    if !st.free_end {
        rho[st.n_t * nc..].iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Power iteration for `||K||` restricted to the free variables.
fn operator_norm(st: &SpaceTime, with_end: bool) -> f64 {
    let nc = st.nc;
    let mut rho: Vec<f64> = (0..st.n_rho())
        .map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).fract())
        .collect();
    let mut mom: Vec<f64> = (0..st.n_slots())
        .map(|i| ((i as f64) * 0.5698402910).fract() - 0.5)
        .collect();
    zero_fixed(st, &mut rho);
    let mut y = Dual {
        yr: vec![0.0; st.n_slots()],
        ym: vec![0.0; st.n_slots()],
        ye: vec![0.0; if with_end { nc } else { 0 }],
    };
    let mut est = 1.0;
    for _ in 0..60 {
        let n = (dot(&rho, &rho) + dot(&mom, &mom)).sqrt();
        rho.iter_mut().for_each(|v| *v /= n);
        mom.iter_mut().for_each(|v| *v /= n);
        apply_k(st, &rho, &mom, with_end, &mut y);
        apply_kt(st, &y, with_end, &mut rho, &mut mom);
        zero_fixed(st, &mut rho);
        let lam = (dot(&rho, &rho) + dot(&mom, &mom)).sqrt();
        if (lam - est).abs() <= 1e-6 * lam {
            est = lam;
            break;
        }
        est = lam;
    }
    // safety margin on the estimate of ||K||^2
    (1.02 * est).sqrt()
}

/// Runs the iteration from a feasible `(rho, mom)` (the fixed endpoint
/// densities are read from `rho`).
pub(crate) fn chambolle_pock(
    st: &SpaceTime,
    mob: &Mobility,
    end: Option<&EndTerm<'_>>,
    mut rho: Vec<f64>,
    mut mom: Vec<f64>,
    settings: &CpSettings,
) -> Result<CpOutcome> {
    let with_end = end.is_some();
    let (nc, ns) = (st.nc, st.n_slots());
    let ne = if with_end { nc } else { 0 };
    st.project(&mut rho, &mut mom);

    let knorm = operator_norm(st, with_end);
    let sigma = 0.9 * settings.step_ratio / knorm;
    let tau = 0.9 / (settings.step_ratio * knorm);

    let mut y = Dual {
        yr: vec![0.0; ns],
        ym: vec![0.0; ns],
        ye: vec![0.0; ne],
    };
    let mut z = Dual {
        yr: vec![0.0; ns],
        ym: vec![0.0; ns],
        ye: vec![0.0; ne],
    };
    let mut kx = Dual {
        yr: vec![0.0; ns],
        ym: vec![0.0; ns],
        ye: vec![0.0; ne],
    };
    let mut ktr = vec![0.0; st.n_rho()];
    let mut ktm = vec![0.0; ns];
    let mut rho_bar = rho.clone();
    let mut mom_bar = mom.clone();
    let mut rho_old = rho.clone();
    let mut mom_old = mom.clone();
    let mut y_old = Dual {
        yr: vec![0.0; ns],
        ym: vec![0.0; ns],
        ye: vec![0.0; ne],
    };

    let mut best: Option<CpOutcome> = None;
    let mut history = Vec::new();
    let check_every = settings.check_every.max(1);
    let prox_step = 1.0 / sigma;

    for it in 1..=settings.max_iter {
        let check = it % check_every == 0 || it == settings.max_iter;
        if check {
            y_old.yr.copy_from_slice(&y.yr);
            y_old.ym.copy_from_slice(&y.ym);
            y_old.ye.copy_from_slice(&y.ye);
        }
        // dual step via Moreau: y = v - sigma prox_{F/sigma}(v / sigma)
        apply_k(st, &rho_bar, &mom_bar, with_end, &mut kx);
        let failed = y
            .yr
            .par_iter_mut()
            .zip(y.ym.par_iter_mut())
            .zip(kx.yr.par_iter().zip(kx.ym.par_iter()))
            .zip(z.yr.par_iter_mut().zip(z.ym.par_iter_mut()))
            .map(|(((yr, ym), (kr, km)), (zr, zm))| {
                let vr = *yr + sigma * kr;
                let vm = *ym + sigma * km;
                let (rt, wt) = (vr / sigma, vm / sigma);
                match prox_action_warm(rt, wt * wt, prox_step, mob, Some(*zr)) {
                    Ok((r, s)) => {
                        *zr = r;
                        *zm = s * wt;
                        *yr = vr - sigma * r;
                        *ym = vm - sigma * s * wt;
                        None
                    }
                    Err(e) => Some(e),
                }
            })
            .find_any(|e| e.is_some())
            .flatten();
        if let Some(e) = failed {
            return Err(e);
        }
        if let Some(end) = end {
            for i in 0..nc {
                let ve = y.ye[i] + sigma * kx.ye[i];
                let r = end.prox(ve / sigma, end.v[i], prox_step)?;
                z.ye[i] = r;
                y.ye[i] = ve - sigma * r;
            }
        }
        // primal step: projected descent
        rho_old.copy_from_slice(&rho);
        mom_old.copy_from_slice(&mom);
        apply_kt(st, &y, with_end, &mut ktr, &mut ktm);
        for (r, g) in rho.iter_mut().zip(&ktr) {
            *r -= tau * g;
        }
        for (m, g) in mom.iter_mut().zip(&ktm) {
            *m -= tau * g;
        }
        // restore fixed data before projecting
        rho[..nc].copy_from_slice(&rho_old[..nc]);
        if !st.free_end {
            let off = st.n_t * nc;
            rho[off..].copy_from_slice(&rho_old[off..]);
        }
        st.project(&mut rho, &mut mom);
        for i in 0..rho.len() {
            rho_bar[i] = 2.0 * rho[i] - rho_old[i];
        }
        for i in 0..ns {
            mom_bar[i] = 2.0 * mom[i] - mom_old[i];
        }

        if check {
            // primal feasibility of the splitting: K x = z
            apply_k(st, &rho, &mom, with_end, &mut kx);
            let mut diff2 = 0.0;
            let mut zn2 = 0.0;
            for (a, b) in kx.yr.iter().zip(&z.yr).chain(kx.ym.iter().zip(&z.ym)).chain(kx.ye.iter().zip(&z.ye)) {
                diff2 += (a - b) * (a - b);
                zn2 += b * b;
            }
            let r_primal = diff2.sqrt() / zn2.sqrt().max(1e-300);
            // stationarity: P_T[(x_old - x)/tau - K^T (y_old - y)]
            let dy = Dual {
                yr: y_old.yr.iter().zip(&y.yr).map(|(a, b)| a - b).collect(),
                ym: y_old.ym.iter().zip(&y.ym).map(|(a, b)| a - b).collect(),
                ye: y_old.ye.iter().zip(&y.ye).map(|(a, b)| a - b).collect(),
            };
            apply_kt(st, &dy, with_end, &mut ktr, &mut ktm);
            let mut pr: Vec<f64> = (0..rho.len())
                .map(|i| (rho_old[i] - rho[i]) / tau - ktr[i])
                .collect();
            let mut pm: Vec<f64> = (0..ns).map(|i| (mom_old[i] - mom[i]) / tau - ktm[i]).collect();
            zero_fixed(st, &mut pr);
            st.project(&mut pr, &mut pm);
            let scale = (dot(&rho, &rho) + dot(&mom, &mom)).sqrt() / tau;
            let r_dual = (dot(&pr, &pr) + dot(&pm, &pm)).sqrt() / scale.max(1e-300);
            let gap = r_primal.max(r_dual);

            let action_sum: f64 = z
                .yr
                .par_iter()
                .zip(z.ym.par_iter())
                .map(|(&r, &m)| action_density(r, m, mob))
                .sum();
            let objective = action_sum + end.map_or(0.0, |e| e.value(&z.ye));
            history.push(objective);

            let better = best.as_ref().map_or(true, |b| gap < b.gap);
            let done = gap <= settings.tol;
            if better || done {
                best = Some(CpOutcome {
                    rho: rho.clone(),
                    mom: mom.clone(),
                    iterations: it,
                    gap,
                    converged: done,
                    action_sum,
                    history: Vec::new(),
                });
            }
            if done {
                break;
            }
            if !gap.is_finite() || norm2(&rho).is_nan() {
                break;
            }
        }
    }
    let mut out = best.expect("at least one residual check runs");
    out.history = history;
    if !out.converged {
        out.iterations = settings.max_iter;
    }
    Ok(out)
}
