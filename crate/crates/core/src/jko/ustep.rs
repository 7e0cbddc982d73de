//! The transport block of the JKO step: over discrete continuity paths
//! `rho_0 = u_prev -> rho_N` with free terminal density, minimize
//! `sum_s m_s^2 / m(rho_bar_s) + kappa sum_i (c rho_N^q - v rho_N)`, which is
//! `F_tau` restricted to `u` and rescaled by `2 tau chi / (dt |cell|)`.
//!
//! The continuity equation is eliminated by writing the densities as
//! `rho_k = rho_0 - dt sum_{j<k} div m_j`; the resulting smooth convex
//! problem in the momenta is solved by damped Newton with conjugate
//! gradients. Paths that hit the positivity boundary fall back to the
//! primal-dual splitting, which handles the constraint through its prox.

use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, dot, norm2};
use crate::model::Mobility;
use crate::transport::spacetime::SpaceTime;
use crate::transport::{chambolle_pock, CpSettings, EndTerm};

pub(crate) struct FreeEnd<'a> {
    pub st: &'a SpaceTime,
    pub mob: Mobility,
    pub rho0: &'a [f64],
    pub end: EndTerm<'a>,
}

/// Per-slot and terminal second-order data at the current iterate.
struct Curvature {
    mm: Vec<f64>,
    mr: Vec<f64>,
    rr: Vec<f64>,
    end: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct FreeEndSolution {
    pub rho: Vec<f64>,
    pub mom: Vec<f64>,
    /// `sum_s m_s^2 / m(rho_bar_s)`.
    pub action_sum: f64,
    pub iterations: usize,
    pub method: &'static str,
    pub residual: f64,
}

impl<'a> FreeEnd<'a> {
    fn q(&self) -> f64 {
        self.end.q
    }

    /// Node densities of the path generated by `m`.
    pub fn densities(&self, m: &[f64], rho: &mut [f64]) {
        let (nc, nf) = (self.st.nc, self.st.n_faces());
        rho[..nc].copy_from_slice(self.rho0);
        let mut div = vec![0.0; nc];
        for k in 0..self.st.n_t {
            self.st.divergence(&m[k * nf..(k + 1) * nf], &mut div);
            for i in 0..nc {
                rho[(k + 1) * nc + i] = rho[k * nc + i] - self.st.dt * div[i];
            }
        }
    }

    fn feasible(&self, rho: &[f64], rbar: &[f64]) -> bool {
        let off = self.st.n_t * self.st.nc;
        rbar.iter().all(|&r| r > 0.0) && rho[off..].iter().all(|&r| r > 0.0)
    }

    /// Objective, or `None` outside the open domain.
    fn objective(&self, m: &[f64], rho: &mut [f64], rbar: &mut [f64]) -> Option<f64> {
        self.densities(m, rho);
        self.st.average(rho, rbar);
        if !self.feasible(rho, rbar) {
            return None;
        }
        let act: f64 = rbar
            .iter()
            .zip(m)
            .map(|(&r, &mv)| mv * mv / self.mob.value(r))
            .sum();
        let off = self.st.n_t * self.st.nc;
        Some(act + self.end.value(&rho[off..]))
    }

    /// Pulls node sensitivities back to momenta: `out_j += dt grad(sum_{k>j} g_k)`.
    fn pull_back(&self, node: &[f64], out: &mut [f64]) {
        let (nc, nf) = (self.st.nc, self.st.n_faces());
        let mut acc = vec![0.0; nc];
        for j in (0..self.st.n_t).rev() {
            for i in 0..nc {
                acc[i] += node[(j + 1) * nc + i];
            }
            self.st
                .add_gradient(&acc, self.st.dt, &mut out[j * nf..(j + 1) * nf]);
        }
    }

    fn gradient(&self, m: &[f64], rho: &[f64], rbar: &[f64], grad: &mut [f64]) {
        let mob = &self.mob;
        let mut node = vec![0.0; self.st.n_rho()];
        let dr: Vec<f64> = rbar
            .iter()
            .zip(m)
            .map(|(&r, &mv)| {
                let mr = mob.value(r);
                -mv * mv * mob.d1(r) / (mr * mr)
            })
            .collect();
        self.st.average_adjoint(&dr, &mut node);
        let off = self.st.n_t * self.st.nc;
        let (c, q, k) = (self.end.coef, self.q(), self.end.kappa);
        for i in 0..self.st.nc {
            let r = rho[off + i];
            node[off + i] += k * (c * q * r.powf(q - 1.0) - self.end.v[i]);
        }
        for (g, (&r, &mv)) in grad.iter_mut().zip(rbar.iter().zip(m)) {
            *g = 2.0 * mv / mob.value(r);
        }
        self.pull_back(&node, grad);
    }

    fn curvature(&self, m: &[f64], rho: &[f64], rbar: &[f64]) -> Curvature {
        let mob = &self.mob;
        let n = m.len();
        let (mut mm, mut mr, mut rr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for s in 0..n {
            let r = rbar[s];
            let (m0, m1, m2) = (mob.value(r), mob.d1(r), mob.d2(r));
            let w = m[s];
            mm[s] = 2.0 / m0;
            mr[s] = -2.0 * w * m1 / (m0 * m0);
            rr[s] = w * w * (2.0 * m1 * m1 - m0 * m2) / (m0 * m0 * m0);
        }
        let off = self.st.n_t * self.st.nc;
        let (c, q, k) = (self.end.coef, self.q(), self.end.kappa);
        let end = rho[off..]
            .iter()
            .map(|&r| k * c * q * (q - 1.0) * r.powf(q - 2.0))
            .collect();
        Curvature { mm, mr, rr, end }
    }

    fn hess_vec(&self, cur: &Curvature, d: &[f64], out: &mut [f64]) {
        let st = self.st;
        let nc = st.nc;
        let mut drho = vec![0.0; st.n_rho()];
        // linear part of the density map (rho_0 fixed)
        let nf = st.n_faces();
        let mut div = vec![0.0; nc];
        for k in 0..st.n_t {
            st.divergence(&d[k * nf..(k + 1) * nf], &mut div);
            for i in 0..nc {
                drho[(k + 1) * nc + i] = drho[k * nc + i] - st.dt * div[i];
            }
        }
        let mut dbar = vec![0.0; st.n_slots()];
        st.average(&drho, &mut dbar);
        let mut b = vec![0.0; st.n_slots()];
        for s in 0..d.len() {
            out[s] = cur.mm[s] * d[s] + cur.mr[s] * dbar[s];
            b[s] = cur.mr[s] * d[s] + cur.rr[s] * dbar[s];
        }
        let mut node = vec![0.0; st.n_rho()];
        st.average_adjoint(&b, &mut node);
        let off = st.n_t * nc;
        for i in 0..nc {
            node[off + i] += cur.end[i] * drho[off + i];
        }
        self.pull_back(&node, out);
    }

    /// Damped Newton–CG from `m` (zero or a warm start). Returns `None`
    /// when the iteration stalls before reaching `tol`.
    pub fn newton(&self, mut m: Vec<f64>, tol: f64, max_iter: usize) -> Option<FreeEndSolution> {
        let st = self.st;
        let n = st.n_slots();
        let mut rho = vec![0.0; st.n_rho()];
        let mut rbar = vec![0.0; n];
        let mut grad = vec![0.0; n];
        // force scale: gradient at the stay-put path
        let zero = vec![0.0; n];
        self.objective(&zero, &mut rho, &mut rbar)?;
        self.gradient(&zero, &rho, &rbar, &mut grad);
        let g0 = norm2(&grad);
        let mut j = match self.objective(&m, &mut rho, &mut rbar) {
            Some(j) => j,
            None => {
                m.iter_mut().for_each(|v| *v = 0.0);
                self.objective(&m, &mut rho, &mut rbar)?
            }
        };
        let finish = |m: Vec<f64>, rho: Vec<f64>, rbar: &[f64], it: usize, res: f64| {
            let action_sum = rbar
                .iter()
                .zip(&m)
                .map(|(&r, &mv)| mv * mv / self.mob.value(r))
                .sum();
            FreeEndSolution {
                rho,
                mom: m,
                action_sum,
                iterations: it,
                method: "newton",
                residual: res,
            }
        };
        if g0 == 0.0 {
            let m = zero;
            self.objective(&m, &mut rho, &mut rbar)?;
            return Some(finish(m, rho, &rbar, 0, 0.0));
        }
        let mut trial_m = vec![0.0; n];
        let mut trial_rho = vec![0.0; st.n_rho()];
        let mut trial_rbar = vec![0.0; n];
        for it in 0..max_iter {
            self.gradient(&m, &rho, &rbar, &mut grad);
            let gn = norm2(&grad);
            if gn <= tol * g0 {
                return Some(finish(m, rho, &rbar, it, gn / g0));
            }
            let cur = self.curvature(&m, &rho, &rbar);
            let inv_diag: Vec<f64> = cur.mm.iter().map(|v| 1.0 / v).collect();
            let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            let mut d = vec![0.0; n];
            let eta = (gn / g0).sqrt().min(0.1);
            let out = conjugate_gradient(
                |x, y| self.hess_vec(&cur, x, y),
                Some(&inv_diag),
                &rhs,
                &mut d,
                eta * gn,
                1000,
                false,
            );
            let mut slope = dot(&grad, &d);
            if !(slope < 0.0) || !out.residual.is_finite() {
                // fall back to preconditioned steepest descent
                for i in 0..n {
                    d[i] = -grad[i] * inv_diag[i];
                }
                slope = dot(&grad, &d);
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                for i in 0..n {
                    trial_m[i] = m[i] + t * d[i];
                }
                if let Some(jt) = self.objective(&trial_m, &mut trial_rho, &mut trial_rbar) {
                    // near the optimum the decrease is below rounding; accept
                    // feasible full steps once the Newton decrement is tiny
                    let tiny = -slope <= 1e-13 * j.abs().max(1e-300);
                    if jt <= j + 1e-4 * t * slope || (tiny && t == 1.0) {
                        accepted = true;
                        j = jt;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                self.gradient(&m, &rho, &rbar, &mut grad);
                let gn = norm2(&grad);
                return if gn <= tol * g0 {
                    Some(finish(m, rho, &rbar, it, gn / g0))
                } else {
                    None
                };
            }
            std::mem::swap(&mut m, &mut trial_m);
            std::mem::swap(&mut rho, &mut trial_rho);
            std::mem::swap(&mut rbar, &mut trial_rbar);
        }
        self.gradient(&m, &rho, &rbar, &mut grad);
        let gn = norm2(&grad);
        if gn <= tol * g0 {
            Some(finish(m, rho, &rbar, max_iter, gn / g0))
        } else {
            None
        }
    }

    /// Primal-dual splitting with the terminal prox.
    pub fn primal_dual(
        &self,
        warm: Option<(&[f64], &[f64])>,
        max_iter: usize,
        tol: f64,
    ) -> Result<FreeEndSolution> {
        let st = self.st;
        let nc = st.nc;
        let (rho, mom) = match warm {
            Some((r, m)) => (r.to_vec(), m.to_vec()),
            None => {
                let mut rho = vec![0.0; st.n_rho()];
                for k in 0..=st.n_t {
                    rho[k * nc..(k + 1) * nc].copy_from_slice(self.rho0);
                }
                (rho, vec![0.0; st.n_slots()])
            }
        };
        let settings = CpSettings {
            max_iter,
            tol,
            step_ratio: 1.0,
            check_every: 10,
        };
        let out = chambolle_pock(st, &self.mob, Some(&self.end), rho, mom, &settings)?;
        if !out.converged {
            return Err(Error::NoConvergence {
                solver: "free-endpoint primal-dual",
                iterations: out.iterations,
                residual: out.gap,
            });
        }
        let mut rho = out.rho;
        // the terminal density must be a nonnegative field of the same mass
        let off = st.n_t * nc;
        let end = &mut rho[off..];
        let mass: f64 = end.iter().sum();
        end.iter_mut().for_each(|r| *r = r.max(0.0));
        let clipped: f64 = end.iter().sum();
        if clipped > 0.0 {
            end.iter_mut().for_each(|r| *r *= mass / clipped);
        }
        Ok(FreeEndSolution {
            rho,
            mom: out.mom,
            action_sum: out.action_sum,
            iterations: out.iterations,
            method: "primal-dual",
            residual: out.gap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn problem_data(g: Grid) -> (Vec<f64>, Vec<f64>) {
        let rho0: Vec<f64> = (0..g.n_cells())
            .map(|i| {
                let [x, y] = g.cell_center(i);
                1.0 + 0.3 * (3.0 * x).cos() + 0.1 * y
            })
            .collect();
        let v: Vec<f64> = (0..g.n_cells())
            .map(|i| {
                let [x, y] = g.cell_center(i);
                1.0 + 0.5 * (2.0 * x + y).sin()
            })
            .collect();
        (rho0, v)
    }

    #[test]
    fn gradient_and_hessian_match_differences() {
        let g = Grid::rect(1.0, 1.0, 5, 4).unwrap();
        let st = SpaceTime::new(g, 3, true);
        let (rho0, v) = problem_data(g);
        let p = FreeEnd {
            st: &st,
            mob: Mobility::Power { alpha: 0.5, eps: 0.1 },
            rho0: &rho0,
            end: EndTerm { kappa: 0.7, coef: 0.9, q: 1.7, v: &v },
        };
        let n = st.n_slots();
        let m: Vec<f64> = (0..n).map(|i| 0.05 * ((i as f64) * 0.37).sin()).collect();
        let d: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3).cos()).collect();
        let mut rho = vec![0.0; st.n_rho()];
        let mut rbar = vec![0.0; n];
        let mut grad = vec![0.0; n];
        p.objective(&m, &mut rho, &mut rbar).unwrap();
        p.gradient(&m, &rho, &rbar, &mut grad);
        let cur = p.curvature(&m, &rho, &rbar);
        let mut hd = vec![0.0; n];
        p.hess_vec(&cur, &d, &mut hd);
        let h = 1e-5;
        let shifted = |t: f64| -> (f64, Vec<f64>) {
            let mt: Vec<f64> = m.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let mut r = vec![0.0; st.n_rho()];
            let mut rb = vec![0.0; n];
            let j = p.objective(&mt, &mut r, &mut rb).unwrap();
            let mut gt = vec![0.0; n];
            p.gradient(&mt, &r, &rb, &mut gt);
            (j, gt)
        };
        let (jp, gp) = shifted(h);
        let (jm, gm) = shifted(-h);
        let fd = (jp - jm) / (2.0 * h);
        assert!((fd - dot(&grad, &d)).abs() < 1e-7 * fd.abs().max(1.0), "{fd}");
        for i in 0..n {
            let fd = (gp[i] - gm[i]) / (2.0 * h);
            assert!((fd - hd[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", hd[i]);
        }
    }

    #[test]
    fn newton_agrees_with_primal_dual() {
        let g = Grid::line(1.0, 16).unwrap();
        let st = SpaceTime::new(g, 2, true);
        let (rho0, v) = problem_data(g);
        let p = FreeEnd {
            st: &st,
            mob: Mobility::Power { alpha: 0.5, eps: 0.05 },
            rho0: &rho0,
            end: EndTerm { kappa: 0.05, coef: 0.8, q: 2.0, v: &v },
        };
        let newton = p.newton(vec![0.0; st.n_slots()], 1e-12, 50).unwrap();
        let pd = p.primal_dual(None, 200_000, 1e-9).unwrap();
        let off = st.n_t * st.nc;
        let diff = newton.rho[off..]
            .iter()
            .zip(&pd.rho[off..])
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-5, "endpoint mismatch {diff}");
        assert!((newton.action_sum - pd.action_sum).abs() < 1e-5 * newton.action_sum.max(1e-12));
    }
}
