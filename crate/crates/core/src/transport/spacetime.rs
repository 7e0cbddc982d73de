//! Staggered space-time discretization shared by the distance solver and
//! the JKO inner problem.
//!
//! Densities live on cells at time nodes `0..=n_t`; momenta live on
//! interior faces on the `n_t` time intervals. The discrete continuity
//! equation on interval `k` is `(rho_{k+1} - rho_k) / dt + div m_k = 0`.
//! Each (interval, face) slot pairs the momentum with the four-point
//! space-time average of the density of its two cells.

use crate::grid::{FaceField, FaceLink, Grid};
use crate::linalg::{transform_axis, DenseBasis};

#[derive(Debug, Clone)]
pub(crate) struct SpaceTime {
    pub grid: Grid,
    pub n_t: usize,
    pub dt: f64,
    pub nc: usize,
    pub links: Vec<FaceLink>,
    /// `1 / h` along the axis of each interior face.
    inv_h: Vec<f64>,
    /// Terminal density is a free variable (JKO) rather than fixed (distance).
    pub free_end: bool,
    time_basis: DenseBasis,
    space_bases: [DenseBasis; 2],
}

impl SpaceTime {
    pub fn new(grid: Grid, n_t: usize, free_end: bool) -> Self {
        let dt = 1.0 / n_t as f64;
        let links = grid.interior_faces();
        let inv_h = links.iter().map(|l| 1.0 / grid.h(l.axis)).collect();
        // Time part of A A^T for the multipliers of the n_t continuity rows.
        let time_basis = if free_end {
            let mut diag = vec![2.0 / (dt * dt); n_t];
            diag[0] = 1.0 / (dt * dt);
            let off = vec![-1.0 / (dt * dt); n_t.saturating_sub(1)];
            DenseBasis::tridiagonal(&diag, &off)
        } else {
            DenseBasis::neumann(n_t, dt)
        };
        let space_bases = [
            DenseBasis::neumann(grid.cells(0), grid.h(0)),
            DenseBasis::neumann(grid.cells(1), grid.h(1)),
        ];
        SpaceTime {
            grid,
            n_t,
            dt,
            nc: grid.n_cells(),
            links,
            inv_h,
            free_end,
            time_basis,
            space_bases,
        }
    }

    pub fn n_faces(&self) -> usize {
        self.links.len()
    }

    pub fn n_slots(&self) -> usize {
        self.n_t * self.links.len()
    }

    pub fn n_rho(&self) -> usize {
        (self.n_t + 1) * self.nc
    }

    /// Weight of one slot in the action: `dt * |cell|`.
    pub fn slot_weight(&self) -> f64 {
        self.dt * self.grid.cell_volume()
    }

    /// `rbar[s]`: four-point average of the density around slot `s`.
    pub fn average(&self, rho: &[f64], rbar: &mut [f64]) {
        let (nc, nf) = (self.nc, self.n_faces());
        for k in 0..self.n_t {
            let (a, b) = (&rho[k * nc..(k + 1) * nc], &rho[(k + 1) * nc..(k + 2) * nc]);
            for (f, l) in self.links.iter().enumerate() {
                rbar[k * nf + f] = 0.25 * (a[l.left] + a[l.right] + b[l.left] + b[l.right]);
            }
        }
    }

    /// Adjoint of [`Self::average`], accumulated into `rho`.
    pub fn average_adjoint(&self, yr: &[f64], rho: &mut [f64]) {
        let (nc, nf) = (self.nc, self.n_faces());
        for k in 0..self.n_t {
            for (f, l) in self.links.iter().enumerate() {
                let y = 0.25 * yr[k * nf + f];
                for node in [k, k + 1] {
                    rho[node * nc + l.left] += y;
                    rho[node * nc + l.right] += y;
                }
            }
        }
    }

    /// `out = div m` for one interval's momentum (interior faces only).
    pub fn divergence(&self, m: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (f, l) in self.links.iter().enumerate() {
            let flux = m[f] * self.inv_h[f];
            out[l.left] += flux;
            out[l.right] -= flux;
        }
    }

    /// Face gradient of a cell field, accumulated with factor `c`.
    pub fn add_gradient(&self, phi: &[f64], c: f64, out: &mut [f64]) {
        for (f, l) in self.links.iter().enumerate() {
            out[f] += c * (phi[l.right] - phi[l.left]) * self.inv_h[f];
        }
    }

    /// Continuity residual per interval, `(rho_{k+1} - rho_k)/dt + div m_k`.
    pub fn continuity_residual(&self, rho: &[f64], mom: &[f64], out: &mut [f64]) {
        let (nc, nf) = (self.nc, self.n_faces());
        let mut div = vec![0.0; nc];
        for k in 0..self.n_t {
            self.divergence(&mom[k * nf..(k + 1) * nf], &mut div);
            for i in 0..nc {
                out[k * nc + i] =
                    (rho[(k + 1) * nc + i] - rho[k * nc + i]) / self.dt + div[i];
            }
        }
    }

    /// Orthogonal projection onto the continuity constraint with the fixed
    /// endpoint densities left untouched. With a fixed terminal density the
    /// constraint is consistent only for equal masses; the mass defect is
    /// left in the residual.
    pub fn project(&self, rho: &mut [f64], mom: &mut [f64]) {
        let (nc, nf, nt) = (self.nc, self.n_faces(), self.n_t);
        let mut lam = vec![0.0; nt * nc];
        self.continuity_residual(rho, mom, &mut lam);
        self.solve_normal(&mut lam);
        // rho_j -= (A^T lam) on free nodes: node j appears with +1/dt in row
        // j-1 and -1/dt in row j.
        let last_free = if self.free_end { nt } else { nt - 1 };
        for j in 1..=last_free {
            for i in 0..nc {
                let mut g = lam[(j - 1) * nc + i];
                if j < nt {
                    g -= lam[j * nc + i];
                }
                rho[j * nc + i] -= g / self.dt;
            }
        }
        // m_k -= D^T lam_k = + grad lam_k
        for k in 0..nt {
            self.add_gradient(&lam[k * nc..(k + 1) * nc], 1.0, &mut mom[k * nf..(k + 1) * nf]);
        }
    }

    /// Solves `(T (x) I + I (x) L) lam = r`: eigenbasis in time (and in
    /// the second spatial axis), then a tridiagonal solve along axis 0 per
    /// mode. The null space is zeroed.
    fn solve_normal(&self, r: &mut [f64]) {
        let (n0, n1) = (self.grid.cells(0), self.grid.cells(1));
        let shape = [self.n_t, n1, n0];
        let mut scratch = Vec::new();
        transform_axis(r, shape, 0, &self.time_basis, true, &mut scratch);
        transform_axis(r, shape, 1, &self.space_bases[1], true, &mut scratch);
        let tv = &self.time_basis.values;
        let yv = &self.space_bases[1].values;
        let xb = &self.space_bases[0];
        let inv_h2 = 1.0 / (self.grid.h(0) * self.grid.h(0));
        let scale = tv.iter().fold(0.0f64, |m, v| m.max(v.abs())) + yv[n1 - 1] + 4.0 * inv_h2;
        let mut c_prime = vec![0.0; n0];
        let mut line = vec![0.0; n0];
        for k in 0..self.n_t {
            for j in 0..n1 {
                let base = (k * n1 + j) * n0;
                let shift = tv[k] + yv[j];
                let seg = &mut r[base..base + n0];
                if shift.abs() <= 1e-12 * scale {
                    // singular mode: Neumann Laplacian alone, solved spectrally
                    line.copy_from_slice(seg);
                    transform_axis(&mut line, [1, 1, n0], 2, xb, true, &mut scratch);
                    line[0] = 0.0;
                    for i in 1..n0 {
                        line[i] /= xb.values[i];
                    }
                    transform_axis(&mut line, [1, 1, n0], 2, xb, false, &mut scratch);
                    seg.copy_from_slice(&line);
                } else {
                    thomas_neumann(seg, shift, inv_h2, &mut c_prime);
                }
            }
        }
        transform_axis(r, shape, 1, &self.space_bases[1], false, &mut scratch);
        transform_axis(r, shape, 0, &self.time_basis, false, &mut scratch);
    }

    pub fn to_face_field(&self, m: &[f64]) -> FaceField {
        let mut out = FaceField::zeros(self.grid);
        for (f, l) in self.links.iter().enumerate() {
            out.set(l, m[f]);
        }
        out
    }

    pub fn from_face_field(&self, field: &FaceField, out: &mut [f64]) {
        for (f, l) in self.links.iter().enumerate() {
            out[f] = field.get(l);
        }
    }
}

/// In-place solve of `(shift I + L) x = d` with `L = (1/h^2)` times the
/// Neumann second-difference matrix (diagonal `1, 2, ..., 2, 1`), `shift > 0`.
fn thomas_neumann(d: &mut [f64], shift: f64, inv_h2: f64, c_prime: &mut [f64]) {
    let n = d.len();
    if n == 1 {
        d[0] /= shift;
        return;
    }
    let off = -inv_h2;
    let diag = |i: usize| {
        if i == 0 || i == n - 1 {
            shift + inv_h2
        } else {
            shift + 2.0 * inv_h2
        }
    };
    let mut denom = diag(0);
    c_prime[0] = off / denom;
    d[0] /= denom;
    for i in 1..n {
        denom = diag(i) - off * c_prime[i - 1];
        c_prime[i] = off / denom;
        d[i] = (d[i] - off * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c_prime[i] * d[i + 1];
    }
}
