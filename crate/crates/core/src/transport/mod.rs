//! Weighted Wasserstein distance through the dynamic (Benamou–Brenier)
//! formulation with a nonlinear mobility, and potential recovery from a
//! flux field.

mod cp;
mod prox;
pub(crate) mod spacetime;

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{
    discrete_divergence, discrete_gradient, solve_elliptic, write_field_csv, Coefficient,
    DensityField, EllipticOptions, FaceField, Grid, GridMeta,
};
use crate::model::Mobility;

pub(crate) use cp::{action_density, chambolle_pock, CpSettings, EndTerm};
pub use prox::prox_action;
use spacetime::SpaceTime;

/// Discrete curve `(rho_k, m_k)` on `[0, 1]`: densities at the `n_t + 1`
/// time nodes, momenta on the `n_t` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPath {
    pub grid: Grid,
    pub n_t: usize,
    pub rho: Vec<DensityField>,
    pub mom: Vec<FaceField>,
}

impl TransportPath {
    /// Constant path with zero momentum.
    pub fn constant(mu: &DensityField, n_t: usize) -> Self {
        TransportPath {
            grid: *mu.grid(),
            n_t,
            rho: vec![mu.clone(); n_t + 1],
            mom: vec![FaceField::zeros(*mu.grid()); n_t],
        }
    }

    pub(crate) fn from_flat(st: &SpaceTime, rho: &[f64], mom: &[f64]) -> Self {
        let (nc, nf) = (st.nc, st.n_faces());
        TransportPath {
            grid: st.grid,
            n_t: st.n_t,
            rho: (0..=st.n_t)
                .map(|k| DensityField::from_vec(st.grid, rho[k * nc..(k + 1) * nc].to_vec()))
                .collect(),
            mom: (0..st.n_t)
                .map(|k| st.to_face_field(&mom[k * nf..(k + 1) * nf]))
                .collect(),
        }
    }

    pub(crate) fn to_flat(&self, st: &SpaceTime) -> (Vec<f64>, Vec<f64>) {
        let nf = st.n_faces();
        let mut rho = Vec::with_capacity(st.n_rho());
        for r in &self.rho {
            rho.extend_from_slice(r.values());
        }
        let mut mom = vec![0.0; st.n_slots()];
        for (k, m) in self.mom.iter().enumerate() {
            st.from_face_field(m, &mut mom[k * nf..(k + 1) * nf]);
        }
        (rho, mom)
    }

    fn check_shape(&self) -> Result<()> {
        if self.n_t == 0 || self.rho.len() != self.n_t + 1 || self.mom.len() != self.n_t {
            return Err(Error::InvalidPath(format!(
                "n_t = {} with {} densities and {} momenta",
                self.n_t,
                self.rho.len(),
                self.mom.len()
            )));
        }
        for r in &self.rho {
            self.grid.check_same(r.grid())?;
        }
        for m in &self.mom {
            self.grid.check_same(m.grid())?;
        }
        Ok(())
    }

    /// L2 norm (cell-volume and `dt` weighted) of the discrete continuity
    /// residual `(rho_{k+1} - rho_k)/dt + div m_k`.
    pub fn continuity_residual(&self) -> Result<f64> {
        self.check_shape()?;
        let dt = 1.0 / self.n_t as f64;
        let mut s = 0.0;
        for k in 0..self.n_t {
            let div = discrete_divergence(&self.mom[k]);
            for i in 0..self.grid.n_cells() {
                let r = (self.rho[k + 1].values()[i] - self.rho[k].values()[i]) / dt
                    + div.values()[i];
                s += r * r;
            }
        }
        Ok((s * dt * self.grid.cell_volume()).sqrt())
    }

    /// Writes `rho_000.csv, ...` and `mom_axis{a}_{k}.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, r) in self.rho.iter().enumerate() {
            write_field_csv(r, &dir.join(format!("rho_{k:03}.csv")))?;
        }
        for (k, m) in self.mom.iter().enumerate() {
            for a in 0..self.grid.dim() {
                let path = dir.join(format!("mom_axis{a}_{k:03}.csv"));
                let mut out = String::from("face,value\n");
                for (f, v) in m.axis(a).iter().enumerate() {
                    out.push_str(&format!("{f},{v}\n"));
                }
                std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Outcome of [`solve_distance`].
#[derive(Debug, Clone)]
pub struct DistanceResult {
    pub value: f64,
    pub path: TransportPath,
    pub iterations: usize,
    /// Larger of the relative splitting residual `||K x - z|| / ||z||` and
    /// the relative projected stationarity residual at the returned iterate.
    pub primal_dual_gap: f64,
    pub converged: bool,
    /// Action at each residual check, for monitoring.
    pub action_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceSummary {
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n_t: usize,
    pub grid: GridMeta,
}

impl DistanceResult {
    pub fn summary(&self) -> DistanceSummary {
        DistanceSummary {
            value: self.value,
            gap: self.primal_dual_gap,
            iterations: self.iterations,
            converged: self.converged,
            n_t: self.path.n_t,
            grid: GridMeta::from(&self.path.grid),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }
}

/// Solver controls for [`solve_distance`].
#[derive(Debug, Clone, Copy)]
pub struct DistanceOptions {
    pub n_t: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub step_ratio: f64,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            n_t: 16,
            max_iter: 20_000,
            tol: 1e-6,
            step_ratio: 1.0,
        }
    }
}

const NEGATIVE_DENSITY_TOL: f64 = 1e-6;

/// `sum_k dt sum_faces |m|^2 / m(rho_bar) |cell|` with the four-point
/// space-time average `rho_bar`. Returns `+inf` when a face with zero
/// mobility carries momentum.
pub fn action(path: &TransportPath, mob: &Mobility) -> Result<f64> {
    path.check_shape()?;
    for (k, r) in path.rho.iter().enumerate() {
        if r.min() < -NEGATIVE_DENSITY_TOL {
            return Err(Error::InvalidPath(format!(
                "negative density {} at time node {k}",
                r.min()
            )));
        }
    }
    let st = SpaceTime::new(path.grid, path.n_t, false);
    let (rho, mom) = path.to_flat(&st);
    let mut rbar = vec![0.0; st.n_slots()];
    st.average(&rho, &mut rbar);
    let s: f64 = rbar
        .iter()
        .zip(&mom)
        .map(|(&r, &m)| action_density(r, m, mob))
        .sum();
    Ok(s * st.slot_weight())
}

/// Single-time action `sum_faces |w|^2 / m(rho_f) |cell|` with the face
/// density the mean of the two adjacent cells.
pub fn slice_action(rho: &DensityField, w: &FaceField, mob: &Mobility) -> Result<f64> {
    rho.grid().check_same(w.grid())?;
    if rho.min() < -NEGATIVE_DENSITY_TOL {
        return Err(Error::InvalidPath(format!("negative density {}", rho.min())));
    }
    let s: f64 = rho
        .grid()
        .interior_faces()
        .iter()
        .map(|l| {
            let r = 0.5 * (rho.values()[l.left] + rho.values()[l.right]);
            action_density(r, w.get(l), mob)
        })
        .sum();
    Ok(s * rho.grid().cell_volume())
}

fn masses_match(mu0: &DensityField, mu1: &DensityField) -> Result<()> {
    mu0.grid().check_same(mu1.grid())?;
    let (a, b) = (mu0.mass(), mu1.mass());
    if (a - b).abs() > 1e-8 * a.abs().max(b.abs()).max(1.0) {
        return Err(Error::MassMismatch(a, b));
    }
    Ok(())
}

/// Weighted Wasserstein distance `W_m(mu0, mu1)` by primal-dual splitting
/// over discrete continuity-equation paths. Hitting the iteration cap
/// returns [`Error::DistanceNotConverged`] carrying the best iterate.
pub fn solve_distance(
    mu0: &DensityField,
    mu1: &DensityField,
    mob: &Mobility,
    opts: &DistanceOptions,
) -> Result<DistanceResult> {
    masses_match(mu0, mu1)?;
    if opts.n_t == 0 || opts.max_iter == 0 || !(opts.tol > 0.0) || !(opts.step_ratio > 0.0) {
        return Err(Error::InvalidParams(format!("bad distance options {opts:?}")));
    }
    if mu0.min() < 0.0 || mu1.min() < 0.0 {
        return Err(Error::InvalidParams("endpoint densities must be nonnegative".into()));
    }
    if !mob.positive_at_zero() && (mu0.min() <= 0.0 || mu1.min() <= 0.0) {
        if let Mobility::Power { .. } = mob {
            return Err(Error::SingularMobility);
        }
    }
    if mu0 == mu1 {
        return Ok(DistanceResult {
            value: 0.0,
            path: TransportPath::constant(mu0, opts.n_t),
            iterations: 0,
            primal_dual_gap: 0.0,
            converged: true,
            action_history: vec![0.0],
        });
    }
    let st = SpaceTime::new(*mu0.grid(), opts.n_t, false);
    let nc = st.nc;
    let mut rho = vec![0.0; st.n_rho()];
    for k in 0..=opts.n_t {
        let t = k as f64 / opts.n_t as f64;
        for i in 0..nc {
            rho[k * nc + i] = (1.0 - t) * mu0.values()[i] + t * mu1.values()[i];
        }
    }
    let mom = vec![0.0; st.n_slots()];
    let settings = CpSettings {
        max_iter: opts.max_iter,
        tol: opts.tol,
        step_ratio: opts.step_ratio,
        check_every: 10,
    };
    let out = chambolle_pock(&st, mob, None, rho, mom, &settings)?;
    let result = DistanceResult {
        value: (out.action_sum * st.slot_weight()).sqrt(),
        path: TransportPath::from_flat(&st, &out.rho, &out.mom),
        iterations: out.iterations,
        primal_dual_gap: out.gap,
        converged: out.converged,
        action_history: out.history.iter().map(|a| a * st.slot_weight()).collect(),
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::DistanceNotConverged(Box::new(result)))
    }
}

/// Potential `phi` (zero mean) with `div(m(rho_f) grad phi) = div w` and
/// zero-flux boundaries; `m(rho_f)` uses the same face density as
/// [`slice_action`], so the substituted flux never has a larger action.
pub fn recover_potential(rho: &DensityField, w: &FaceField, mob: &Mobility) -> Result<DensityField> {
    let grid = *rho.grid();
    grid.check_same(w.grid())?;
    let div_w = discrete_divergence(w);
    if div_w.values().iter().all(|v| *v == 0.0) {
        return Ok(DensityField::zeros(grid));
    }
    let mut faces = FaceField::zeros(grid);
    for l in grid.interior_faces() {
        let r = 0.5 * (rho.values()[l.left] + rho.values()[l.right]);
        faces.set(&l, mob.value(r.max(0.0)));
    }
    // -div(a grad phi) = -div w
    let rhs = div_w.map(|v| -v);
    solve_elliptic(Coefficient::Faces(&faces), 0.0, &rhs, &EllipticOptions::default())
}

/// `m(rho_f) grad phi` on interior faces.
pub fn potential_flux(rho: &DensityField, phi: &DensityField, mob: &Mobility) -> FaceField {
    let mut g = discrete_gradient(phi);
    for l in rho.grid().interior_faces() {
        let r = 0.5 * (rho.values()[l.left] + rho.values()[l.right]);
        g.set(&l, g.get(&l) * mob.value(r.max(0.0)));
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn action_examples() {
        let g = Grid::line(1.0, 10).unwrap();
        let mob = Mobility::Power { alpha: 0.5, eps: 0.0 };
        let one = DensityField::constant(g, 1.0);
        let mut path = TransportPath::constant(&one, 4);
        assert_eq!(action(&path, &mob).unwrap(), 0.0);
        for m in &mut path.mom {
            for l in g.interior_faces() {
                m.set(&l, 0.2);
            }
        }
        let a = action(&path, &mob).unwrap();
        assert!((a - 0.04 * 9.0 / 10.0).abs() < 1e-14, "{a}");
        for m in &mut path.mom {
            *m = m.scale(2.0);
        }
        assert!((action(&path, &mob).unwrap() - 4.0 * a).abs() < 1e-14);
        // momentum through an empty face costs infinitely much
        let mut empty = TransportPath::constant(&DensityField::zeros(g), 2);
        empty.mom[0].set(&g.interior_faces()[0], 1.0);
        assert_eq!(action(&empty, &mob).unwrap(), f64::INFINITY);
        empty.rho[1].values_mut()[0] = -1.0;
        assert!(matches!(action(&empty, &mob), Err(Error::InvalidPath(_))));
    }

    #[test]
    fn identical_endpoints_cost_nothing() {
        let g = Grid::line(1.0, 8).unwrap();
        let mu = DensityField::from_fn(g, |x, _| 1.0 + 0.2 * (PI * x).cos());
        let r = solve_distance(&mu, &mu, &Mobility::Linear, &Default::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let g = Grid::line(1.0, 8).unwrap();
        let a = DensityField::constant(g, 1.0);
        let b = DensityField::constant(g, 1.1);
        let err = solve_distance(&a, &b, &Mobility::Linear, &Default::default());
        assert!(matches!(err, Err(Error::MassMismatch(..))));
    }

    #[test]
    fn potential_consistency_and_zero_flux() {
        let g = Grid::rect(1.0, 1.0, 12, 10).unwrap();
        let mob = Mobility::Power { alpha: 0.5, eps: 0.1 };
        let rho = DensityField::from_fn(g, |x, y| 1.0 + 0.5 * (3.0 * x + y).sin());
        let psi = DensityField::from_fn(g, |x, y| (PI * x).cos() + x * y);
        let w = potential_flux(&rho, &psi, &mob);
        let phi = recover_potential(&rho, &w, &mob).unwrap();
        let shifted = psi.map(|v| v - psi.mean());
        let err = phi.sub(&shifted).values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-7, "{err}");
        let zero = recover_potential(&rho, &FaceField::zeros(g), &mob).unwrap();
        assert!(zero.values().iter().all(|v| *v == 0.0));
    }
}
