//! Regular box grids in one and two dimensions with cell-centred scalar
//! fields and face-centred flux fields. All differential operators assume
//! homogeneous Neumann (zero-flux) boundaries.

mod elliptic;
mod io;
mod ops;

pub use elliptic::{heat_step, solve_elliptic, Coefficient, EllipticOptions};
pub use io::{read_field_csv, write_field_csv, GridMeta};
pub(crate) use ops::gradient_sup_norm;
pub(crate) use elliptic::{implicit_diffusion, solve_elliptic_from};
pub use ops::{
    discrete_divergence, discrete_gradient, discrete_laplacian, field_norm, hessian_sup_norm,
    NormKind,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    cells: [usize; 2],
}

/// A face between two cells, identified by its axis and its index within
/// that axis' face array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceLink {
    pub axis: usize,
    pub face: usize,
    pub left: usize,
    pub right: usize,
}

impl Grid {
    pub fn new(extents: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = extents.len();
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {dim}"
            )));
        }
        if cells.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} extents but {} cell counts",
                dim,
                cells.len()
            )));
        }
        let mut e = [1.0; 2];
        let mut c = [1usize; 2];
        for a in 0..dim {
            if !(extents[a] > 0.0 && extents[a].is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "extent along axis {a} must be positive, got {}",
                    extents[a]
                )));
            }
            if cells[a] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "need at least 2 cells along axis {a}, got {}",
                    cells[a]
                )));
            }
            e[a] = extents[a];
            c[a] = cells[a];
        }
        Ok(Grid {
            dim,
            extents: e,
            cells: c,
        })
    }

    pub fn line(length: f64, n: usize) -> Result<Self> {
        Self::new(&[length], &[n])
    }

    pub fn rect(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extents[axis]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn cell_counts(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.extents[axis] / self.cells[axis] as f64
    }

    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h(a)).product()
    }

    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    /// Length of the face array along `axis`, boundary faces included.
    pub fn n_faces(&self, axis: usize) -> usize {
        if axis >= self.dim {
            return 0;
        }
        match axis {
            0 => (self.cells[0] + 1) * self.cells[1],
            _ => self.cells[0] * (self.cells[1] + 1),
        }
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.cells[0] * j
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.coords(idx);
        [
            (i as f64 + 0.5) * self.h(0),
            if self.dim > 1 {
                (j as f64 + 0.5) * self.h(1)
            } else {
                0.0
            },
        ]
    }

    /// Face index along `axis` of the face on the low side of cell `(i, j)`
    /// (`k` runs over `0..=n` along that axis).
    pub fn face_index(&self, axis: usize, i: usize, j: usize) -> usize {
        match axis {
            0 => i + (self.cells[0] + 1) * j,
            _ => i + self.cells[0] * j,
        }
    }

    pub fn is_boundary_face(&self, axis: usize, face: usize) -> bool {
        match axis {
            0 => {
                let k = face % (self.cells[0] + 1);
                k == 0 || k == self.cells[0]
            }
            _ => {
                let k = face / self.cells[0];
                k == 0 || k == self.cells[1]
            }
        }
    }

    /// All interior faces, axis 0 first, in storage order.
    pub fn interior_faces(&self) -> Vec<FaceLink> {
        let (n0, n1) = (self.cells[0], self.cells[1]);
        let mut out = Vec::with_capacity(self.n_interior_faces());
        for j in 0..n1 {
            for k in 1..n0 {
                out.push(FaceLink {
                    axis: 0,
                    face: self.face_index(0, k, j),
                    left: self.index(k - 1, j),
                    right: self.index(k, j),
                });
            }
        }
        if self.dim > 1 {
            for k in 1..n1 {
                for i in 0..n0 {
                    out.push(FaceLink {
                        axis: 1,
                        face: self.face_index(1, i, k),
                        left: self.index(i, k - 1),
                        right: self.index(i, k),
                    });
                }
            }
        }
        out
    }

    pub fn n_interior_faces(&self) -> usize {
        let (n0, n1) = (self.cells[0], self.cells[1]);
        let mut n = (n0 - 1) * n1;
        if self.dim > 1 {
            n += n0 * (n1 - 1);
        }
        n
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Cell-centred scalar field: densities, chemical concentrations,
/// potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::InvalidGrid(format!(
                "field has {} values for {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "non-finite value {} at cell {bad}",
                values[bad]
            )));
        }
        Ok(DensityField { grid, values })
    }

    pub(crate) fn from_vec(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_cells());
        DensityField { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        DensityField {
            grid,
            values: vec![c; grid.n_cells()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at cell centres.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.n_cells())
            .map(|idx| {
                let [x, y] = grid.cell_center(idx);
                f(x, y)
            })
            .collect();
        DensityField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DensityField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cell inner product `sum f g vol`.
    pub fn inner(&self, other: &DensityField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        crate::linalg::dot(&self.values, &other.values) * self.grid.cell_volume()
    }

    /// Rescales to unit mass. Fails on nonpositive mass.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::InvalidParams(format!(
                "cannot normalize a field with mass {m}"
            )));
        }
        Ok(self.map(|v| v / m))
    }

    pub fn is_probability(&self, tol: f64) -> bool {
        self.min() >= 0.0 && (self.mass() - 1.0).abs() <= tol
    }

    pub fn sub(&self, other: &DensityField) -> DensityField {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &DensityField) -> DensityField {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn zip_with(&self, other: &DensityField, f: impl Fn(f64, f64) -> f64) -> DensityField {
        debug_assert_eq!(self.grid, other.grid);
        DensityField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Face-centred vector field, one array per axis. Boundary faces carry the
/// zero normal flux.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    data: [Vec<f64>; 2],
}

impl FaceField {
    pub fn zeros(grid: Grid) -> Self {
        FaceField {
            grid,
            data: [vec![0.0; grid.n_faces(0)], vec![0.0; grid.n_faces(1)]],
        }
    }

    /// Builds a face field from per-axis arrays; boundary entries must be 0.
    pub fn new(grid: Grid, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.len() != grid.dim() {
            return Err(Error::InvalidGrid(format!(
                "{} face arrays for a {}-d grid",
                axes.len(),
                grid.dim()
            )));
        }
        let mut f = FaceField::zeros(grid);
        for (a, arr) in axes.into_iter().enumerate() {
            if arr.len() != grid.n_faces(a) {
                return Err(Error::InvalidGrid(format!(
                    "axis {a}: {} face values, expected {}",
                    arr.len(),
                    grid.n_faces(a)
                )));
            }
            for (k, v) in arr.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidGrid(format!("non-finite face value at {k}")));
                }
                if grid.is_boundary_face(a, k) && *v != 0.0 {
                    return Err(Error::InvalidGrid(format!(
                        "boundary face {k} on axis {a} carries nonzero flux {v}"
                    )));
                }
            }
            f.data[a] = arr;
        }
        Ok(f)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn axis(&self, a: usize) -> &[f64] {
        &self.data[a]
    }

    pub fn axis_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a]
    }

    pub fn get(&self, link: &FaceLink) -> f64 {
        self.data[link.axis][link.face]
    }

    pub fn set(&mut self, link: &FaceLink, v: f64) {
        self.data[link.axis][link.face] = v;
    }

    /// Face inner product, weighting each face by the cell volume.
    pub fn inner(&self, other: &FaceField) -> f64 {
        let mut s = 0.0;
        for a in 0..self.grid.dim() {
            s += crate::linalg::dot(&self.data[a], &other.data[a]);
        }
        s * self.grid.cell_volume()
    }

    pub fn scale(&self, c: f64) -> FaceField {
        let mut out = self.clone();
        for a in 0..2 {
            out.data[a].iter_mut().for_each(|v| *v *= c);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|d| d.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_invariants() {
        let g = Grid::rect(2.0, 1.0, 4, 5).unwrap();
        assert_eq!(g.n_cells(), 20);
        assert!((g.h(0) - 0.5).abs() < 1e-15);
        assert!((g.cell_volume() - 0.1).abs() < 1e-15);
        assert_eq!(g.n_faces(0), 25);
        assert_eq!(g.n_faces(1), 24);
        assert_eq!(g.interior_faces().len(), g.n_interior_faces());
        assert!(Grid::line(1.0, 1).is_err());
        assert!(Grid::line(0.0, 4).is_err());
        assert!(Grid::new(&[1.0, 1.0, 1.0], &[2, 2, 2]).is_err());
    }

    #[test]
    fn boundary_face_detection() {
        let g = Grid::rect(1.0, 1.0, 3, 2).unwrap();
        let interior: Vec<_> = g.interior_faces();
        for l in &interior {
            assert!(!g.is_boundary_face(l.axis, l.face));
        }
        let n_boundary0 = (0..g.n_faces(0))
            .filter(|&f| g.is_boundary_face(0, f))
            .count();
        assert_eq!(n_boundary0, 4);
    }

    #[test]
    fn face_field_rejects_boundary_flux() {
        let g = Grid::line(1.0, 3).unwrap();
        assert!(FaceField::new(g, vec![vec![1.0, 0.0, 0.0, 0.0]]).is_err());
        assert!(FaceField::new(g, vec![vec![0.0, 1.0, 2.0, 0.0]]).is_ok());
    }
}
