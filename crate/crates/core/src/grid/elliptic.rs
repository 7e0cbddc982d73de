use super::{DensityField, FaceField, Grid};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, norm2};

/// Diffusion coefficient of `(c I - div(a grad))`.
#[derive(Debug, Clone, Copy)]
pub enum Coefficient<'a> {
    Constant(f64),
    /// Cell values; faces take the arithmetic mean of their two cells.
    Cells(&'a DensityField),
    /// Face values used as given.
    Faces(&'a FaceField),
}

#[derive(Debug, Clone, Copy)]
pub struct EllipticOptions {
    /// Relative residual target `||A x - b|| <= tol ||b||`.
    pub tol: f64,
    /// Defaults to ten times the number of cells.
    pub max_iter: Option<usize>,
}

impl Default for EllipticOptions {
    fn default() -> Self {
        EllipticOptions {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

fn face_weights(grid: &Grid, coef: Coefficient<'_>) -> Result<Vec<(usize, usize, f64)>> {
    let links = grid.interior_faces();
    let mut out = Vec::with_capacity(links.len());
    for l in links {
        let h = grid.h(l.axis);
        let a = match coef {
            Coefficient::Constant(c) => c,
            Coefficient::Cells(f) => {
                grid.check_same(f.grid())?;
                0.5 * (f.values()[l.left] + f.values()[l.right])
            }
            Coefficient::Faces(w) => {
                grid.check_same(w.grid())?;
                w.get(&l)
            }
        };
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParams(format!(
                "diffusion coefficient must be positive, got {a} on face {:?}",
                l
            )));
        }
        out.push((l.left, l.right, a / (h * h)));
    }
    Ok(out)
}

/// Solves `(c I - div(a grad)) phi = rhs` with homogeneous Neumann
/// boundaries by preconditioned conjugate gradients. With `c = 0` the
/// right-hand side must have zero mean and the solution is returned with
/// zero mean.
pub fn solve_elliptic(
    coef: Coefficient<'_>,
    c: f64,
    rhs: &DensityField,
    opts: &EllipticOptions,
) -> Result<DensityField> {
    solve_elliptic_from(coef, c, rhs, None, opts)
}

pub(crate) fn solve_elliptic_from(
    coef: Coefficient<'_>,
    c: f64,
    rhs: &DensityField,
    guess: Option<&[f64]>,
    opts: &EllipticOptions,
) -> Result<DensityField> {
    let grid = *rhs.grid();
    if !(c >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "reaction coefficient must be nonnegative, got {c}"
        )));
    }
    let weights = face_weights(&grid, coef)?;
    let n = grid.n_cells();
    let singular = c == 0.0;
    let mut b = rhs.values().to_vec();
    if singular {
        let mean = rhs.mean();
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if mean.abs() > opts.tol * scale {
            return Err(Error::SingularSystem { mean });
        }
        b.iter_mut().for_each(|v| *v -= mean);
    }
    let mut diag = vec![c; n];
    for &(l, r, w) in &weights {
        diag[l] += w;
        diag[r] += w;
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
    let apply = |x: &[f64], out: &mut [f64]| {
        for i in 0..x.len() {
            out[i] = c * x[i];
        }
        for &(l, r, w) in &weights {
            let flux = w * (x[r] - x[l]);
            out[l] -= flux;
            out[r] += flux;
        }
    };
    let mut x = match guess {
        Some(g) => g.to_vec(),
        None => vec![0.0; n],
    };
    let bnorm = norm2(&b);
    if bnorm == 0.0 {
        return Ok(DensityField::zeros(grid));
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    let outcome = conjugate_gradient(
        apply,
        Some(&inv_diag),
        &b,
        &mut x,
        opts.tol * bnorm,
        max_iter,
        singular,
    );
    if !outcome.converged {
        return Err(Error::NoConvergence {
            solver: "elliptic conjugate gradients",
            iterations: outcome.iterations,
            residual: outcome.residual / bnorm,
        });
    }
    if singular {
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
    #[cfg(debug_assertions)]
    {
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        let res: f64 = ax
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        debug_assert!(
            res <= 10.0 * opts.tol * bnorm + 1e-300,
            "elliptic residual {res:e} above contract"
        );
    }
    Ok(DensityField::from_vec(grid, x))
}

/// One backward-Euler step of `d_t f = delta Lap f` over `dt`, with the
/// cell mean restored to the input mean.
pub(crate) fn implicit_diffusion(
    f: &DensityField,
    delta: f64,
    dt: f64,
    opts: &EllipticOptions,
) -> Result<DensityField> {
    let rhs = f.map(|v| v / dt);
    let mut out = solve_elliptic_from(
        Coefficient::Constant(delta),
        1.0 / dt,
        &rhs,
        Some(f.values()),
        opts,
    )?;
    let shift = f.mean() - out.mean();
    out.values_mut().iter_mut().for_each(|v| *v += shift);
    Ok(out)
}

/// Approximates the Neumann heat semigroup `exp(h_t delta Lap)` by
/// `substeps` backward-Euler solves.
pub fn heat_step(f: &DensityField, delta: f64, h_t: f64, substeps: usize) -> Result<DensityField> {
    if !(delta > 0.0) || !(h_t > 0.0) || substeps == 0 {
        return Err(Error::InvalidParams(format!(
            "heat step needs delta > 0, h_t > 0, substeps >= 1 (got {delta}, {h_t}, {substeps})"
        )));
    }
    let dt = h_t / substeps as f64;
    let opts = EllipticOptions::default();
    let mut cur = f.clone();
    for _ in 0..substeps {
        cur = implicit_diffusion(&cur, delta, dt, &opts)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{discrete_divergence, discrete_gradient};
    use std::f64::consts::PI;

    #[test]
    fn constant_balance() {
        let g = Grid::rect(1.0, 1.0, 6, 7).unwrap();
        let rhs = DensityField::constant(g, 2.5);
        let phi = solve_elliptic(Coefficient::Constant(1.0), 1.0, &rhs, &Default::default())
            .unwrap();
        for v in phi.values() {
            assert!((v - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_mode_closed_form() {
        let g = Grid::line(1.0, 64).unwrap();
        let rhs = DensityField::from_fn(g, |x, _| 0.1 * (PI * x).cos());
        let phi = solve_elliptic(Coefficient::Constant(1.0), 0.0, &rhs, &Default::default())
            .unwrap();
        let exact = DensityField::from_fn(g, |x, _| 0.1 * (PI * x).cos() / (PI * PI));
        let err = phi.sub(&exact).values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-3, "{err}");
        assert!(phi.mean().abs() < 1e-14);
    }

    #[test]
    fn v_step_constant_solution() {
        // ((1 + 1/tau) I - Lap) v = v_prev / tau + u with tau = 1, v_prev = 0, u = 1
        let g = Grid::line(1.0, 16).unwrap();
        let rhs = DensityField::constant(g, 1.0);
        let v = solve_elliptic(Coefficient::Constant(1.0), 2.0, &rhs, &Default::default())
            .unwrap();
        for x in v.values() {
            assert!((x - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_rhs_rejected() {
        let g = Grid::line(1.0, 8).unwrap();
        let rhs = DensityField::constant(g, 1.0);
        let err = solve_elliptic(Coefficient::Constant(1.0), 0.0, &rhs, &Default::default());
        assert!(matches!(err, Err(Error::SingularSystem { .. })));
    }

    #[test]
    fn iteration_cap_reported() {
        let g = Grid::line(1.0, 64).unwrap();
        let rhs = DensityField::from_fn(g, |x, _| (7.0 * x).sin());
        let opts = EllipticOptions {
            tol: 1e-14,
            max_iter: Some(2),
        };
        let err = solve_elliptic(Coefficient::Constant(1.0), 0.1, &rhs, &opts);
        assert!(matches!(err, Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn variable_coefficient_residual() {
        let g = Grid::rect(1.0, 1.0, 12, 9).unwrap();
        let a = DensityField::from_fn(g, |x, y| 1.0 + x + 0.5 * y * y);
        let rhs = DensityField::from_fn(g, |x, y| (PI * x).cos() * (PI * y).cos());
        let phi = solve_elliptic(Coefficient::Cells(&a), 0.0, &rhs, &Default::default()).unwrap();
        let mut flux = discrete_gradient(&phi);
        for l in g.interior_faces() {
            let coef = 0.5 * (a.values()[l.left] + a.values()[l.right]);
            flux.set(&l, flux.get(&l) * coef);
        }
        let res = discrete_divergence(&flux).map(|v| -v).sub(&rhs);
        let rel = norm2(res.values()) / norm2(rhs.values());
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn heat_semigroup_properties() {
        let g = Grid::line(1.0, 64).unwrap();
        let c = DensityField::constant(g, 0.3);
        let out = heat_step(&c, 1.0, 0.1, 5).unwrap();
        for v in out.values() {
            assert!((v - 0.3).abs() < 1e-12);
        }
        let f = DensityField::from_fn(g, |x, _| (PI * x).cos());
        let out = heat_step(&f, 1.0, 0.01, 100).unwrap();
        assert!((out.mass() - f.mass()).abs() < 1e-12);
        assert!(out.min() >= f.min() - 1e-10);
        // amplitude of the cosine mode via projection
        let amp = out.inner(&f) / f.inner(&f);
        assert!((amp - (-PI * PI * 0.01f64).exp()).abs() < 1e-3, "{amp}");
    }
}
