use super::{DensityField, FaceField};
use crate::error::{Error, Result};

/// Two-point face differences; boundary faces are zero.
pub fn discrete_gradient(f: &DensityField) -> FaceField {
    let g = *f.grid();
    let mut out = FaceField::zeros(g);
    let v = f.values();
    for link in g.interior_faces() {
        let h = g.h(link.axis);
        out.set(&link, (v[link.right] - v[link.left]) / h);
    }
    out
}

/// Negative adjoint of [`discrete_gradient`] under the cell and face inner
/// products.
pub fn discrete_divergence(w: &FaceField) -> DensityField {
    let g = *w.grid();
    let mut out = vec![0.0; g.n_cells()];
    for link in g.interior_faces() {
        let flux = w.get(&link) / g.h(link.axis);
        out[link.left] += flux;
        out[link.right] -= flux;
    }
    DensityField::from_vec(g, out)
}

/// Neumann Laplacian `div(grad f)`.
pub fn discrete_laplacian(f: &DensityField) -> DensityField {
    discrete_divergence(&discrete_gradient(f))
}


#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    Lq(f64),
    H1,
    /// `||f||_H1^2 + ||Lap f||_L2^2`, the discrete H2 surrogate.
    H2,
}

pub fn field_norm(f: &DensityField, kind: NormKind) -> Result<f64> {
    let vol = f.grid().cell_volume();
    match kind {
        NormKind::Lq(q) => {
            if !(q >= 1.0) || !q.is_finite() {
                return Err(Error::BadExponent(format!("L^q norm needs q >= 1, got {q}")));
            }
            let s: f64 = f.values().iter().map(|v| v.abs().powf(q)).sum();
            Ok((s * vol).powf(1.0 / q))
        }
        NormKind::H1 => Ok(h1_squared(f).sqrt()),
        NormKind::H2 => {
            let lap = discrete_laplacian(f);
            Ok((h1_squared(f) + lap.inner(&lap)).sqrt())
        }
    }
}

fn h1_squared(f: &DensityField) -> f64 {
    let grad = discrete_gradient(f);
    f.inner(f) + grad.inner(&grad)
}

/// Sup over cells of the cell-centred gradient magnitude (face components
/// averaged onto cells).
pub(crate) fn gradient_sup_norm(f: &DensityField) -> f64 {
    let g = *f.grid();
    let grad = discrete_gradient(f);
    let mut best: f64 = 0.0;
    for idx in 0..g.n_cells() {
        let (i, j) = g.coords(idx);
        let mut s = 0.0;
        for a in 0..g.dim() {
            let (lo, hi) = match a {
                0 => (g.face_index(0, i, j), g.face_index(0, i + 1, j)),
                _ => (g.face_index(1, i, j), g.face_index(1, i, j + 1)),
            };
            let c = 0.5 * (grad.axis(a)[lo] + grad.axis(a)[hi]);
            s += c * c;
        }
        best = best.max(s.sqrt());
    }
    best
}

/// Sup over cells with a full stencil of `sum_{i,j} |d^2 f / dx_i dx_j|`.
pub fn hessian_sup_norm(f: &DensityField) -> f64 {
    let g = *f.grid();
    let v = f.values();
    let (n0, n1) = (g.cells(0), g.cells(1));
    let h0 = g.h(0);
    let mut best: f64 = 0.0;
    if g.dim() == 1 {
        for i in 1..n0 - 1 {
            let d = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h0 * h0);
            best = best.max(d.abs());
        }
        return best;
    }
    let h1 = g.h(1);
    for j in 1..n1 - 1 {
        for i in 1..n0 - 1 {
            let at = |a: usize, b: usize| v[g.index(a, b)];
            let dxx = (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / (h0 * h0);
            let dyy = (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (h1 * h1);
            let dxy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1)
                + at(i - 1, j - 1))
                / (4.0 * h0 * h1);
            best = best.max(dxx.abs() + dyy.abs() + 2.0 * dxy.abs());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit_line(n: usize) -> Grid {
        Grid::line(1.0, n).unwrap()
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let f = DensityField::constant(Grid::rect(1.0, 2.0, 5, 4).unwrap(), 3.7);
        assert_eq!(discrete_gradient(&f).max_abs(), 0.0);
    }

    #[test]
    fn gradient_exact_on_linear_data() {
        let g = unit_line(4);
        let f = DensityField::from_fn(g, |x, _| x);
        let grad = discrete_gradient(&f);
        let a = grad.axis(0);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[4], 0.0);
        for v in &a[1..4] {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_second_order() {
        let err = |n: usize| {
            let g = unit_line(n);
            let f = DensityField::from_fn(g, |x, _| (2.0 * PI * x).sin());
            let grad = discrete_gradient(&f);
            (1..n)
                .map(|k| {
                    let x = k as f64 / n as f64;
                    (grad.axis(0)[k] - 2.0 * PI * (2.0 * PI * x).cos()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn divergence_hand_stencil() {
        let g = unit_line(4);
        let w = FaceField::new(g, vec![vec![0.0, 1.0, 1.0, 1.0, 0.0]]).unwrap();
        let d = discrete_divergence(&w);
        let expect = [4.0, 0.0, 0.0, -4.0];
        for (a, b) in d.values().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(discrete_divergence(&FaceField::zeros(g)).max(), 0.0);
    }

    #[test]
    fn summation_by_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let g = if trial % 2 == 0 {
                Grid::line(1.3, 9).unwrap()
            } else {
                Grid::rect(1.0, 0.7, 6, 5).unwrap()
            };
            let f = DensityField::from_vec(
                g,
                (0..g.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            );
            let mut w = FaceField::zeros(g);
            for l in g.interior_faces() {
                w.set(&l, rng.gen_range(-1.0..1.0));
            }
            let lhs = discrete_divergence(&w).inner(&f) + w.inner(&discrete_gradient(&f));
            assert!(lhs.abs() < 1e-12, "{lhs}");
        }
    }

    #[test]
    fn norms() {
        let g = Grid::rect(1.0, 1.0, 8, 8).unwrap();
        let one = DensityField::constant(g, 1.0);
        for q in [1.0, 1.5, 2.0, 7.0] {
            assert!((field_norm(&one, NormKind::Lq(q)).unwrap() - 1.0).abs() < 1e-12);
        }
        let zero = DensityField::zeros(g);
        for k in [NormKind::Lq(2.0), NormKind::H1, NormKind::H2] {
            assert_eq!(field_norm(&zero, k).unwrap(), 0.0);
        }
        assert!(matches!(
            field_norm(&one, NormKind::Lq(0.5)),
            Err(Error::BadExponent(_))
        ));
        let lin = DensityField::from_fn(unit_line(128), |x, _| x);
        let l2 = field_norm(&lin, NormKind::Lq(2.0)).unwrap();
        assert!((l2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn hessian_of_linear_is_zero() {
        let f = DensityField::from_fn(unit_line(16), |x, _| 3.0 * x);
        assert!(hessian_sup_norm(&f) < 1e-10);
        assert!((gradient_sup_norm(&f) - 3.0).abs() < 1e-12);
        let q = DensityField::from_fn(Grid::rect(1.0, 1.0, 10, 10).unwrap(), |x, y| x * y);
        assert!((hessian_sup_norm(&q) - 2.0).abs() < 1e-10);
    }
}
