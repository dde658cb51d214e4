//! Uniform marker-and-cell discretization of a rectangle.
//!
//! Scalars (phase field, chemical potential, pressure, density) live at cell
//! centers; velocity components and fluxes live on the cell faces normal to
//! them. Cells are numbered `i + nx * j` with `i` the column and `j` the row.
//! Face fields store all x-faces first (`(nx + 1) * ny`, numbered
//! `i + (nx + 1) * j`, `i = 0..=nx`) followed by all y-faces
//! (`nx * (ny + 1)`, numbered `i + nx * j`, `j = 0..=ny`).
//!
//! The discrete gradient and divergence are exact negative adjoints of each
//! other with respect to the cell and face inner products (both weighted by
//! the cell area) whenever the face field vanishes on the boundary. The
//! discrete energy law of the time stepper relies on that identity.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Csr;

/// Axis-aligned rectangle `[0, lx] x [0, ly]` split into `nx * ny` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

/// Values at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField(Vec<f64>);

/// Values on cell faces: x-faces followed by y-faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField(Vec<f64>);

/// Which family a face belongs to, with its lattice indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    X { i: usize, j: usize },
    Y { i: usize, j: usize },
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be positive, got {nx} x {ny}"
            )));
        }
        if !(lx > 0.0 && lx.is_finite() && ly > 0.0 && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "side lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx: lx / nx as f64,
            hy: ly / ny as f64,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_x_faces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    pub fn num_y_faces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    pub fn num_faces(&self) -> usize {
        self.num_x_faces() + self.num_y_faces()
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    #[inline]
    pub fn x_face(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    #[inline]
    pub fn y_face(&self, i: usize, j: usize) -> usize {
        self.num_x_faces() + i + self.nx * j
    }

    pub fn face(&self, f: usize) -> Face {
        let nxf = self.num_x_faces();
        if f < nxf {
            Face::X {
                i: f % (self.nx + 1),
                j: f / (self.nx + 1),
            }
        } else {
            let g = f - nxf;
            Face::Y {
                i: g % self.nx,
                j: g / self.nx,
            }
        }
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        match self.face(f) {
            Face::X { i, .. } => i == 0 || i == self.nx,
            Face::Y { j, .. } => j == 0 || j == self.ny,
        }
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (i, j) = (c % self.nx, c / self.nx);
        [(i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy]
    }

    pub fn face_center(&self, f: usize) -> [f64; 2] {
        match self.face(f) {
            Face::X { i, j } => [i as f64 * self.hx, (j as f64 + 0.5) * self.hy],
            Face::Y { i, j } => [(i as f64 + 0.5) * self.hx, j as f64 * self.hy],
        }
    }

    /// Cells on either side of an interior face; `None` for boundary faces.
    pub fn face_neighbors(&self, f: usize) -> Option<(usize, usize)> {
        match self.face(f) {
            Face::X { i, j } if i > 0 && i < self.nx => Some((self.cell(i - 1, j), self.cell(i, j))),
            Face::Y { i, j } if j > 0 && j < self.ny => Some((self.cell(i, j - 1), self.cell(i, j))),
            _ => None,
        }
    }

    /// Area-weighted inner product of two cell fields.
    pub fn cell_dot(&self, u: &[f64], w: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), w.len());
        self.cell_area() * u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Area-weighted inner product of two face fields.
    pub fn face_dot(&self, u: &[f64], w: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), w.len());
        self.cell_area() * u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn cell_norm(&self, u: &[f64]) -> f64 {
        self.cell_dot(u, u).sqrt()
    }

    /// Discrete integral `sum_i u_i * hx * hy`.
    pub fn cell_integral(&self, u: &CellField) -> Result<f64> {
        check_len("cell field", self.num_cells(), u.len())?;
        Ok(self.integral(u))
    }

    pub(crate) fn integral(&self, u: &[f64]) -> f64 {
        self.cell_area() * u.iter().sum::<f64>()
    }

    pub(crate) fn mean(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() / u.len() as f64
    }

    pub fn discrete_gradient(&self, u: &CellField) -> Result<FaceField> {
        check_len("cell field", self.num_cells(), u.len())?;
        let mut out = vec![0.0; self.num_faces()];
        self.gradient_into(u, &mut out);
        Ok(FaceField(out))
    }

    /// Difference quotients on interior faces, zero on boundary faces.
    pub(crate) fn gradient_into(&self, u: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for j in 0..ny {
            out[self.x_face(0, j)] = 0.0;
            out[self.x_face(nx, j)] = 0.0;
            for i in 1..nx {
                out[self.x_face(i, j)] = (u[self.cell(i, j)] - u[self.cell(i - 1, j)]) / self.hx;
            }
        }
        for i in 0..nx {
            out[self.y_face(i, 0)] = 0.0;
            out[self.y_face(i, ny)] = 0.0;
        }
        for j in 1..ny {
            for i in 0..nx {
                out[self.y_face(i, j)] = (u[self.cell(i, j)] - u[self.cell(i, j - 1)]) / self.hy;
            }
        }
    }

    pub fn discrete_divergence(&self, w: &FaceField) -> Result<CellField> {
        check_len("face field", self.num_faces(), w.len())?;
        let mut out = vec![0.0; self.num_cells()];
        self.divergence_into(w, &mut out);
        Ok(CellField(out))
    }

    pub(crate) fn divergence_into(&self, w: &[f64], out: &mut [f64]) {
        for j in 0..self.ny {
            for i in 0..self.nx {
                out[self.cell(i, j)] = (w[self.x_face(i + 1, j)] - w[self.x_face(i, j)]) / self.hx
                    + (w[self.y_face(i, j + 1)] - w[self.y_face(i, j)]) / self.hy;
            }
        }
    }

    pub fn neumann_laplacian(&self) -> NeumannLaplacian {
        NeumannLaplacian { grid: *self }
    }

    /// Arithmetic mean of the two cells adjacent to each interior face;
    /// boundary faces copy their single neighbor.
    pub(crate) fn cell_to_faces(&self, u: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = vec![0.0; self.num_faces()];
        for j in 0..ny {
            for i in 0..=nx {
                let l = u[self.cell(i.saturating_sub(1), j)];
                let r = u[self.cell(i.min(nx - 1), j)];
                out[self.x_face(i, j)] = 0.5 * (l + r);
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let b = u[self.cell(i, j.saturating_sub(1))];
                let t = u[self.cell(i, j.min(ny - 1))];
                out[self.y_face(i, j)] = 0.5 * (b + t);
            }
        }
        out
    }

    /// Face velocities averaged to cell centers, returned as `(u, v)` pairs.
    pub fn faces_to_cell_vectors(&self, w: &FaceField) -> Vec<[f64; 2]> {
        (0..self.num_cells())
            .map(|c| {
                let (i, j) = (c % self.nx, c / self.nx);
                [
                    0.5 * (w[self.x_face(i, j)] + w[self.x_face(i + 1, j)]),
                    0.5 * (w[self.y_face(i, j)] + w[self.y_face(i, j + 1)]),
                ]
            })
            .collect()
    }
}

/// Five-point Laplacian with homogeneous Neumann conditions, `D G`.
#[derive(Debug, Clone, Copy)]
pub struct NeumannLaplacian {
    grid: Grid,
}

impl NeumannLaplacian {
    pub fn apply(&self, u: &CellField) -> Result<CellField> {
        check_len("cell field", self.grid.num_cells(), u.len())?;
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        Ok(CellField(out))
    }

    pub(crate) fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell(i, j);
                let uc = u[c];
                let mut acc = 0.0;
                if i > 0 {
                    acc += cx * (u[c - 1] - uc);
                }
                if i + 1 < g.nx {
                    acc += cx * (u[c + 1] - uc);
                }
                if j > 0 {
                    acc += cy * (u[c - g.nx] - uc);
                }
                if j + 1 < g.ny {
                    acc += cy * (u[c + g.nx] - uc);
                }
                out[c] = acc;
            }
        }
    }

    pub fn to_csr(&self) -> Csr {
        let g = &self.grid;
        let (cx, cy) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
        let mut triplets = Vec::with_capacity(5 * g.num_cells());
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.cell(i, j);
                let mut diag = 0.0;
                let mut link = |other: usize, w: f64| {
                    triplets.push((c, other, w));
                    diag -= w;
                };
                if i > 0 {
                    link(c - 1, cx);
                }
                if i + 1 < g.nx {
                    link(c + 1, cx);
                }
                if j > 0 {
                    link(c - g.nx, cy);
                }
                if j + 1 < g.ny {
                    link(c + g.nx, cy);
                }
                triplets.push((c, c, diag));
            }
        }
        Csr::from_triplets(g.num_cells(), g.num_cells(), &triplets)
    }
}

macro_rules! field_impl {
    ($name:ident, $count:ident, $what:literal) => {
        impl $name {
            pub fn zeros(grid: &Grid) -> Self {
                Self(vec![0.0; grid.$count()])
            }

            pub fn constant(grid: &Grid, value: f64) -> Self {
                Self(vec![value; grid.$count()])
            }

            pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self> {
                check_len($what, grid.$count(), values.len())?;
                Ok(Self(values))
            }

            pub(crate) fn wrap(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }
    };
}

field_impl!(CellField, num_cells, "cell field");
field_impl!(FaceField, num_faces, "face field");

impl CellField {
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        Self((0..grid.num_cells()).map(|c| f(grid.cell_center(c))).collect())
    }
}

impl FaceField {
    /// Sets every boundary face to zero.
    pub fn zero_boundary(&mut self, grid: &Grid) {
        for f in 0..self.0.len() {
            if grid.is_boundary_face(f) {
                self.0[f] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn build_grid_counts() {
        let g = Grid::new(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(g.num_cells(), 4);
        assert_eq!(g.cell_area(), 0.25);
        assert_eq!(g.num_x_faces(), 6);
        assert_eq!(g.num_y_faces(), 6);

        let g = Grid::new(1, 1, 1.0, 1.0).unwrap();
        assert_eq!((g.num_cells(), g.num_x_faces(), g.num_y_faces()), (1, 2, 2));

        let g = Grid::new(4, 2, 2.0, 1.0).unwrap();
        assert_eq!((g.hx, g.hy), (0.5, 0.5));
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(0, 3, 1.0, 1.0).is_err());
        assert!(Grid::new(3, 3, 0.0, 1.0).is_err());
        assert!(Grid::new(3, 3, 1.0, -2.0).is_err());
    }

    #[test]
    fn integrals() {
        let g = Grid::new(64, 64, 1.0, 1.0).unwrap();
        assert_eq!(g.cell_integral(&CellField::constant(&g, 1.0)).unwrap(), 1.0);
        assert_eq!(g.cell_integral(&CellField::zeros(&g)).unwrap(), 0.0);
        let x = CellField::from_fn(&g, |p| p[0]);
        assert!((g.cell_integral(&x).unwrap() - 0.5).abs() < 1e-14);
        let bad = CellField::wrap(vec![0.0; 3]);
        assert!(g.cell_integral(&bad).is_err());
    }

    #[test]
    fn gradient_of_constant_and_linear() {
        let g = Grid::new(5, 4, 1.0, 2.0).unwrap();
        let grad = g.discrete_gradient(&CellField::constant(&g, 3.0)).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));

        let lin = CellField::from_fn(&g, |p| 2.5 * p[0]);
        let grad = g.discrete_gradient(&lin).unwrap();
        for f in 0..g.num_faces() {
            match g.face(f) {
                Face::X { i, .. } if i > 0 && i < g.nx => assert!((grad[f] - 2.5).abs() < 1e-12),
                _ => assert_eq!(grad[f], 0.0),
            }
        }
        // the constant interior gradient has zero divergence away from the walls
        let div = g.discrete_divergence(&grad).unwrap();
        for j in 0..g.ny {
            for i in 1..g.nx - 1 {
                assert!(div[g.cell(i, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_divergence_adjoint() {
        let g = Grid::new(7, 5, 1.3, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = CellField::wrap((0..g.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let mut w = FaceField::wrap((0..g.num_faces()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            w.zero_boundary(&g);
            let gu = g.discrete_gradient(&u).unwrap();
            let dw = g.discrete_divergence(&w).unwrap();
            let lhs = g.face_dot(&gu, &w);
            let rhs = g.cell_dot(&u, &dw);
            assert!((lhs + rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
            assert!(g.cell_integral(&dw).unwrap().abs() < 1e-12);
        }
        let zero = g.discrete_divergence(&FaceField::zeros(&g)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_structure() {
        let g = Grid::new(6, 4, 1.0, 1.0).unwrap();
        let lap = g.neumann_laplacian();
        let lc = lap.apply(&CellField::constant(&g, 2.0)).unwrap();
        assert!(lc.iter().all(|v| v.abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = CellField::wrap((0..g.num_cells()).map(|_| rng.gen::<f64>()).collect());
        let w = CellField::wrap((0..g.num_cells()).map(|_| rng.gen::<f64>()).collect());
        let au = lap.apply(&u).unwrap();
        let aw = lap.apply(&w).unwrap();
        assert!((g.cell_dot(&au, &w) - g.cell_dot(&u, &aw)).abs() < 1e-10);

        // D G equals the stencil
        let gu = g.discrete_gradient(&u).unwrap();
        let dgu = g.discrete_divergence(&gu).unwrap();
        for c in 0..g.num_cells() {
            assert!((dgu[c] - au[c]).abs() < 1e-10);
        }
        let csr = lap.to_csr();
        let mut y = vec![0.0; g.num_cells()];
        csr.matvec(&u, &mut y);
        for c in 0..g.num_cells() {
            assert!((y[c] - au[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_spectrum_two_by_two() {
        // 4x4 matrix on the unit square with h = 1/2; the 1D two-cell block
        // has eigenvalues 0 and -2/h^2 = -8, so the 2D sums are 0, -8, -8, -16
        let g = Grid::new(2, 2, 1.0, 1.0).unwrap();
        let dense = g.neumann_laplacian().to_csr().to_dense();
        let eig = crate::linalg::symmetric_eigenvalues(&dense, 4);
        let mut eig = eig;
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(eig[0].abs() < 1e-12);
        assert!((eig[1] + 8.0).abs() < 1e-10 && (eig[2] + 8.0).abs() < 1e-10);
        assert!((eig[3] + 16.0).abs() < 1e-10);
    }
}
