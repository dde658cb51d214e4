//! Neumann heat-flow smoothing `P_h`: `k` implicit Euler steps of length
//! `h / k`, each solving `(I - (h/k) Δ_N) u_next = u`.

use crate::error::{check_len, Error, Result};
use crate::grid::{CellField, Grid};
use crate::spectral::CosineBasis;

/// Smoothing operator for a fixed grid, step and substep count.
#[derive(Debug, Clone)]
pub struct Smoother {
    basis: CosineBasis,
    symbol: Vec<f64>,
    h: f64,
    substeps: usize,
}

impl Smoother {
    pub fn new(grid: &Grid, h: f64, substeps: usize) -> Result<Self> {
        Self::with_basis(CosineBasis::new(grid), h, substeps)
    }

    pub(crate) fn with_basis(basis: CosineBasis, h: f64, substeps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::param("smoothing", format!("h must be positive, got {h}")));
        }
        if substeps == 0 {
            return Err(Error::param("smoothing", "substeps must be at least 1"));
        }
        let tau = h / substeps as f64;
        let symbol = basis
            .eigenvalues()
            .iter()
            .map(|&l| (1.0 + tau * l).powi(-(substeps as i32)))
            .collect();
        Ok(Self {
            basis,
            symbol,
            h,
            substeps,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn apply(&self, phi: &CellField) -> Result<CellField> {
        check_len("cell field", self.basis.len(), phi.len())?;
        let mut out = vec![0.0; phi.len()];
        self.apply_into(phi, &mut out);
        Ok(CellField::wrap(out))
    }

    pub(crate) fn apply_into(&self, phi: &[f64], out: &mut [f64]) {
        self.basis.apply_diagonal(&self.symbol, phi, out);
        // the constant mode passes through unchanged; remove transform roundoff
        let n = phi.len() as f64;
        let shift = (phi.iter().sum::<f64>() - out.iter().sum::<f64>()) / n;
        out.iter_mut().for_each(|v| *v += shift);
    }
}

/// One implicit Euler step of the Neumann heat flow of length `h`.
pub fn smooth(phi: &CellField, h: f64, grid: &Grid) -> Result<CellField> {
    Smoother::new(grid, h, 1)?.apply(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn solves_the_implicit_step() {
        let g = Grid::new(10, 7, 1.0, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = CellField::wrap((0..70).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let h = 3e-3;
        let u = smooth(&phi, h, &g).unwrap();
        let lu = g.neumann_laplacian().apply(&u).unwrap();
        for i in 0..70 {
            assert!((u[i] - h * lu[i] - phi[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_mean_and_range() {
        let g = Grid::new(16, 12, 1.0, 1.0).unwrap();
        let c = smooth(&CellField::constant(&g, 0.37), 1e-2, &g).unwrap();
        assert!(c.iter().all(|&v| (v - 0.37).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let phi = CellField::wrap((0..g.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let u = smooth(&phi, 1e-2, &g).unwrap();
            assert!((g.mean(&u) - g.mean(&phi)).abs() < 1e-12);
            let (lo, hi) = phi.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            assert!(u.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }

    #[test]
    fn linear() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        let a = CellField::from_fn(&g, |x| x[0] * x[1]);
        let b = CellField::from_fn(&g, |x| (3.0 * x[0]).sin());
        let s = Smoother::new(&g, 1e-2, 3).unwrap();
        let combo = CellField::wrap((0..64).map(|i| 2.0 * a[i] - 0.5 * b[i]).collect());
        let (sa, sb, sc) = (s.apply(&a).unwrap(), s.apply(&b).unwrap(), s.apply(&combo).unwrap());
        for i in 0..64 {
            assert!((sc[i] - (2.0 * sa[i] - 0.5 * sb[i])).abs() < 1e-13);
        }
    }

    #[test]
    fn first_order_consistency() {
        let g = Grid::new(64, 64, 1.0, 1.0).unwrap();
        let phi = CellField::from_fn(&g, |x| (PI * x[0]).cos() * (PI * x[1]).cos());
        let dist = |h: f64| {
            let u = smooth(&phi, h, &g).unwrap();
            let d: Vec<f64> = (0..phi.len()).map(|i| u[i] - phi[i]).collect();
            linalg::norm2(&d)
        };
        let (d1, d2, d3) = (dist(1e-2), dist(5e-3), dist(2.5e-3));
        for r in [d1 / d2, d2 / d3] {
            assert!((1.7..=2.3).contains(&r), "{r}");
        }
    }

    #[test]
    fn substeps_approach_semigroup() {
        let g = Grid::new(32, 1, 1.0, 1.0 / 32.0).unwrap();
        let phi = CellField::from_fn(&g, |x| (PI * x[0]).cos());
        let h = 0.05;
        let basis = CosineBasis::new(&g);
        let lam = basis.eigenvalues()[1];
        let exact = (-h * lam).exp();
        let mut last = f64::INFINITY;
        for k in [1, 4, 16] {
            let u = Smoother::new(&g, h, k).unwrap().apply(&phi).unwrap();
            let err = (u[0] / phi[0] - exact).abs();
            assert!(err < last);
            last = err;
        }
        assert!(matches!(Smoother::new(&g, 0.0, 1), Err(Error::InvalidParameter { .. })));
    }
}
