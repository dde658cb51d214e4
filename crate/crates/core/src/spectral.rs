//! Cosine basis of the Neumann Laplacian.
//!
//! The orthonormal DCT-II vectors diagonalize the five-point Neumann
//! Laplacian exactly, which gives a direct solver for the smoothing step and
//! cheap diagonal preconditioners for every other cell-centered solve.

use std::f64::consts::PI;

use crate::grid::Grid;

/// Orthogonal transform `A ⊗ B` acting on row-major `n1 x n2` arrays
/// (first index fastest), with `A` along the first axis.
#[derive(Debug, Clone)]
pub(crate) struct Separable {
    n1: usize,
    n2: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Separable {
    /// `a` is `n1 x n1` and `b` is `n2 x n2`, both row-major with basis
    /// vectors as rows.
    pub(crate) fn new(n1: usize, n2: usize, a: Vec<f64>, b: Vec<f64>) -> Self {
        debug_assert_eq!(a.len(), n1 * n1);
        debug_assert_eq!(b.len(), n2 * n2);
        Self { n1, n2, a, b }
    }

    pub(crate) fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub(crate) fn forward(&self, u: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        let mut tmp = vec![0.0; n1 * n2];
        for j in 0..n2 {
            let row = &u[j * n1..(j + 1) * n1];
            for p in 0..n1 {
                let c = &self.a[p * n1..(p + 1) * n1];
                tmp[p + n1 * j] = c.iter().zip(row).map(|(x, y)| x * y).sum();
            }
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..n2 {
            for j in 0..n2 {
                let c = self.b[q * n2 + j];
                let src = &tmp[n1 * j..n1 * (j + 1)];
                let dst = &mut out[n1 * q..n1 * (q + 1)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
    }

    pub(crate) fn inverse(&self, coef: &[f64], out: &mut [f64]) {
        let (n1, n2) = (self.n1, self.n2);
        let mut tmp = vec![0.0; n1 * n2];
        for q in 0..n2 {
            for j in 0..n2 {
                let c = self.b[q * n2 + j];
                let src = &coef[n1 * q..n1 * (q + 1)];
                let dst = &mut tmp[n1 * j..n1 * (j + 1)];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
        for j in 0..n2 {
            let row = &tmp[j * n1..(j + 1) * n1];
            let dst = &mut out[j * n1..(j + 1) * n1];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..n1 {
                let c = &self.a[p * n1..(p + 1) * n1];
                let s = row[p];
                for (d, ci) in dst.iter_mut().zip(c) {
                    *d += s * ci;
                }
            }
        }
    }

    pub(crate) fn apply_diagonal(&self, symbol: &[f64], u: &[f64], out: &mut [f64]) {
        let mut coef = vec![0.0; self.len()];
        self.forward(u, &mut coef);
        for (c, s) in coef.iter_mut().zip(symbol) {
            *c *= s;
        }
        self.inverse(&coef, out);
    }
}

fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for p in 0..n {
        let s = if p == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[p * n + i] = s * (PI * p as f64 * (i as f64 + 0.5) / n as f64).cos();
        }
    }
    m
}

/// Normalizes each row of a square row-major matrix.
fn normalize_rows(mut m: Vec<f64>, n: usize) -> Vec<f64> {
    for row in m.chunks_mut(n.max(1)) {
        let s = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// Sine vectors `sin(pi k i / (n + 1))`, `i, k = 1..=n`: eigenvectors of the
/// second difference with zero values just outside both ends.
pub(crate) fn dst1_matrix(n: usize) -> Vec<f64> {
    let big = (n + 1) as f64;
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            m[k * n + i] = (PI * (k + 1) as f64 * (i + 1) as f64 / big).sin();
        }
    }
    normalize_rows(m, n)
}

/// Sine vectors `sin(pi k (i + 1/2) / n)`, `k = 1..=n`: eigenvectors of the
/// second difference with odd reflection across both end faces.
pub(crate) fn dst2_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            m[k * n + i] = (PI * (k + 1) as f64 * (i as f64 + 0.5) / n as f64).sin();
        }
    }
    normalize_rows(m, n)
}

/// Eigenvalues of the negative second difference for [`dst1_matrix`].
pub(crate) fn dst1_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (1..=n)
        .map(|k| (2.0 - 2.0 * (PI * k as f64 / (n + 1) as f64).cos()) / (h * h))
        .collect()
}

/// Eigenvalues of the negative second difference for [`dst2_matrix`].
pub(crate) fn dst2_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (1..=n)
        .map(|k| (2.0 - 2.0 * (PI * k as f64 / n as f64).cos()) / (h * h))
        .collect()
}

#[derive(Debug, Clone)]
pub struct CosineBasis {
    nx: usize,
    t: Separable,
    /// Eigenvalues of `-Laplacian` per mode `p + nx * q`.
    lambda: Vec<f64>,
}

impl CosineBasis {
    pub fn new(grid: &Grid) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let ex: Vec<f64> = (0..nx)
            .map(|p| (2.0 - 2.0 * (PI * p as f64 / nx as f64).cos()) / (grid.hx * grid.hx))
            .collect();
        let ey: Vec<f64> = (0..ny)
            .map(|q| (2.0 - 2.0 * (PI * q as f64 / ny as f64).cos()) / (grid.hy * grid.hy))
            .collect();
        let mut lambda = vec![0.0; nx * ny];
        for q in 0..ny {
            for p in 0..nx {
                lambda[p + nx * q] = ex[p] + ey[q];
            }
        }
        Self {
            nx,
            t: Separable::new(nx, ny, dct_matrix(nx), dct_matrix(ny)),
            lambda,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mode_index(&self, p: usize, q: usize) -> usize {
        p + self.nx * q
    }

    /// Cell values to mode coefficients.
    pub fn forward(&self, u: &[f64], out: &mut [f64]) {
        self.t.forward(u, out)
    }

    /// Mode coefficients back to cell values.
    pub fn inverse(&self, coef: &[f64], out: &mut [f64]) {
        self.t.inverse(coef, out)
    }

    /// Basis vector of mode `(p, q)` as a cell field.
    pub fn mode(&self, p: usize, q: usize) -> Vec<f64> {
        let mut coef = vec![0.0; self.len()];
        coef[self.mode_index(p, q)] = 1.0;
        let mut out = vec![0.0; self.len()];
        self.inverse(&coef, &mut out);
        out
    }

    /// Applies the operator with the given diagonal in mode space.
    pub fn apply_diagonal(&self, symbol: &[f64], u: &[f64], out: &mut [f64]) {
        self.t.apply_diagonal(symbol, u, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_orthonormality() {
        let g = Grid::new(6, 5, 1.0, 2.0).unwrap();
        let b = CosineBasis::new(&g);
        let u: Vec<f64> = (0..30).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let mut c = vec![0.0; 30];
        let mut back = vec![0.0; 30];
        b.forward(&u, &mut c);
        b.inverse(&c, &mut back);
        for i in 0..30 {
            assert!((back[i] - u[i]).abs() < 1e-12);
        }
        let e: f64 = u.iter().map(|v| v * v).sum();
        let ec: f64 = c.iter().map(|v| v * v).sum();
        assert!((e - ec).abs() < 1e-10);
    }

    #[test]
    fn sine_bases_diagonalize_dirichlet_differences() {
        let n = 6;
        for (m, lam, ghost) in [
            (dst1_matrix(n), dst1_eigenvalues(n, 0.5), 0.0),
            (dst2_matrix(n), dst2_eigenvalues(n, 0.5), -1.0),
        ] {
            for k in 0..n {
                let v = &m[k * n..(k + 1) * n];
                assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
                for i in 0..n {
                    // ghost = 0: zero outside; ghost = -1: odd reflection across the end face
                    let left = if i == 0 { ghost * v[0] } else { v[i - 1] };
                    let right = if i == n - 1 { ghost * v[n - 1] } else { v[i + 1] };
                    let d2 = -(left - 2.0 * v[i] + right) / 0.25;
                    assert!((d2 - lam[k] * v[i]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn modes_are_laplacian_eigenvectors() {
        let g = Grid::new(7, 4, 1.5, 1.0).unwrap();
        let b = CosineBasis::new(&g);
        let lap = g.neumann_laplacian();
        for &(p, q) in &[(0, 0), (1, 0), (3, 2), (6, 3)] {
            let m = b.mode(p, q);
            let mut lm = vec![0.0; m.len()];
            lap.apply_into(&m, &mut lm);
            let lam = b.eigenvalues()[b.mode_index(p, q)];
            for i in 0..m.len() {
                assert!((lm[i] + lam * m[i]).abs() < 1e-9 * (1.0 + lam));
            }
        }
    }
}
