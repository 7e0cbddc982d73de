//! Small dense/iterative helpers shared by the elliptic solvers and the
//! transport projection.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for a symmetric positive
/// (semi)definite operator. `inv_diag` is a Jacobi preconditioner. When
/// `zero_mean` is set, iterates and residuals are kept orthogonal to the
/// constants, which is the range of a singular Neumann operator.
pub(crate) fn conjugate_gradient<F>(
    mut apply: F,
    inv_diag: Option<&[f64]>,
    rhs: &[f64],
    x: &mut [f64],
    abs_tol: f64,
    max_iter: usize,
    zero_mean: bool,
) -> CgOutcome
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    if zero_mean {
        remove_mean(&mut r);
    }
    let mut res = norm2(&r);
    if res <= abs_tol {
        return CgOutcome {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let precondition = |r: &[f64], z: &mut Vec<f64>| {
        z.clear();
        match inv_diag {
            Some(d) => z.extend(r.iter().zip(d).map(|(a, b)| a * b)),
            None => z.extend_from_slice(r),
        }
    };
    let mut z = Vec::with_capacity(n);
    precondition(&r, &mut z);
    if zero_mean {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return CgOutcome {
                iterations: it,
                residual: res,
                converged: false,
            };
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if zero_mean {
            remove_mean(&mut r);
        }
        res = norm2(&r);
        if res <= abs_tol {
            return CgOutcome {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        precondition(&r, &mut z);
        if zero_mean {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

/// Row-major dense square matrix used for per-axis eigenbases.
#[derive(Debug, Clone)]
pub(crate) struct DenseBasis {
    pub n: usize,
    /// `vectors[i * n + j]` is component `i` of eigenvector `j`.
    pub vectors: Vec<f64>,
    pub values: Vec<f64>,
}

impl DenseBasis {
    /// Orthonormal DCT-II basis: the eigenvectors of the Neumann second
    /// difference matrix `(1/h^2) tridiag(-1, 2, -1)` with end diagonal 1.
    pub fn neumann(n: usize, h: f64) -> Self {
        let mut vectors = vec![0.0; n * n];
        let mut values = vec![0.0; n];
        let nf = n as f64;
        for j in 0..n {
            let c = if j == 0 {
                (1.0 / nf).sqrt()
            } else {
                (2.0 / nf).sqrt()
            };
            for i in 0..n {
                vectors[i * n + j] =
                    c * (std::f64::consts::PI * j as f64 * (i as f64 + 0.5) / nf).cos();
            }
            values[j] = (2.0 - 2.0 * (std::f64::consts::PI * j as f64 / nf).cos()) / (h * h);
        }
        values[0] = 0.0;
        DenseBasis { n, vectors, values }
    }

    /// Eigenbasis of a symmetric tridiagonal matrix.
    pub fn tridiagonal(diag: &[f64], off: &[f64]) -> Self {
        let n = diag.len();
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = off[i];
                m[(i + 1, i)] = off[i];
            }
        }
        let eig = m.symmetric_eigen();
        let mut vectors = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                vectors[i * n + j] = eig.eigenvectors[(i, j)];
            }
        }
        DenseBasis {
            n,
            vectors,
            values: eig.eigenvalues.iter().copied().collect(),
        }
    }
}

/// Applies `basis^T` (forward) or `basis` (inverse) along one axis of a
/// row-major 3-index array with `shape = [s0, s1, s2]` (s2 fastest).
pub(crate) fn transform_axis(
    data: &mut [f64],
    shape: [usize; 3],
    axis: usize,
    basis: &DenseBasis,
    forward: bool,
    scratch: &mut Vec<f64>,
) {
    let n = shape[axis];
    debug_assert_eq!(n, basis.n);
    if n == 1 {
        // 1x1 orthonormal basis is +-1.
        if basis.vectors[0] < 0.0 {
            data.iter_mut().for_each(|x| *x = -*x);
        }
        return;
    }
    let stride = match axis {
        0 => shape[1] * shape[2],
        1 => shape[2],
        _ => 1,
    };
    let outer = match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    };
    let v = &basis.vectors;
    if stride == 1 {
        scratch.resize(n, 0.0);
        for o in 0..outer {
            let line = &mut data[o * n..(o + 1) * n];
            for (j, out) in scratch.iter_mut().enumerate() {
                *out = if forward {
                    (0..n).map(|i| v[i * n + j] * line[i]).sum()
                } else {
                    (0..n).map(|i| v[j * n + i] * line[i]).sum()
                };
            }
            line.copy_from_slice(scratch);
        }
        return;
    }
    // contiguous axpy over the fast index for strided axes
    scratch.resize(n * stride, 0.0);
    for o in 0..outer {
        let block = &mut data[o * n * stride..(o + 1) * n * stride];
        scratch.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let src = &block[i * stride..(i + 1) * stride];
            for j in 0..n {
                let c = if forward { v[i * n + j] } else { v[j * n + i] };
                let dst = &mut scratch[j * stride..(j + 1) * stride];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        block.copy_from_slice(scratch);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumann_basis_diagonalizes_second_difference() {
        let n = 7;
        let h = 0.3;
        let b = DenseBasis::neumann(n, h);
        for j in 0..n {
            for i in 0..n {
                let v = |k: usize| b.vectors[k * n + j];
                let left = if i > 0 { v(i) - v(i - 1) } else { 0.0 };
                let right = if i + 1 < n { v(i + 1) - v(i) } else { 0.0 };
                let lap = -(right - left) / (h * h);
                assert!((lap - b.values[j] * v(i)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn transform_round_trip() {
        let b = DenseBasis::tridiagonal(&[1.0, 2.0, 2.0], &[-1.0, -1.0]);
        let mut data: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let orig = data.clone();
        let mut s = Vec::new();
        transform_axis(&mut data, [2, 3, 2], 1, &b, true, &mut s);
        transform_axis(&mut data, [2, 3, 2], 1, &b, false, &mut s);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let mut x = vec![0.0; 2];
        let out = conjugate_gradient(
            |v, out| {
                out[0] = a[0][0] * v[0] + a[0][1] * v[1];
                out[1] = a[1][0] * v[0] + a[1][1] * v[1];
            },
            None,
            &[1.0, 2.0],
            &mut x,
            1e-14,
            10,
            false,
        );
        assert!(out.converged);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }
}
