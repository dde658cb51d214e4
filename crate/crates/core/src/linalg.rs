//! Small sparse-matrix type and the Krylov solvers used by the phase,
//! momentum and elliptic solves.

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub rows: usize,
    pub cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order and explicit zeros are kept.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, c, _) in triplets {
            debug_assert!(r < rows && c < cols);
            counts[r + 1] += 1;
        }
        for r in 0..rows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut cols_tmp = vec![0usize; triplets.len()];
        let mut vals_tmp = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols_tmp[k] = c;
            vals_tmp[k] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..rows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|k| (cols_tmp[k], vals_tmp[k])));
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                triplets.push((self.indices[k], r, self.values[k]));
            }
        }
        Csr::from_triplets(self.cols, self.rows, &triplets)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows.min(self.cols)];
        for (r, dr) in d.iter_mut().enumerate() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.indices[k] == r {
                    *dr += self.values[k];
                }
            }
        }
        d
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.values[k]))
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                d[r * self.cols + c] += v;
            }
        }
        d
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Root-mean-square of the entries.
pub fn rms(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        norm2(a) / (a.len() as f64).sqrt()
    }
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Removes the arithmetic mean in place.
pub fn remove_mean(x: &mut [f64]) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    for v in x.iter_mut() {
        *v -= m;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    /// Absolute target for the Euclidean norm of the residual.
    pub abs_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KrylovStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Right-preconditioned restarted GMRES (modified Gram-Schmidt with one
/// reorthogonalization pass). `x` holds the initial guess on entry.
pub fn gmres(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<KrylovStats> {
    let n = b.len();
    let m = opts.restart.max(1);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut hess = vec![0.0; (m + 1) * m];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut total = 0usize;

    loop {
        apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        if beta <= opts.abs_tol {
            return Ok(KrylovStats {
                iterations: total,
                residual: beta,
            });
        }
        if total >= opts.max_iter || !beta.is_finite() {
            return Err(Error::NotConverged {
                solver: "gmres",
                iterations: total,
                residual: beta,
            });
        }
        basis.clear();
        zs.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut k = 0;
        while k < m && total < opts.max_iter {
            let mut z = vec![0.0; n];
            precond(&basis[k], &mut z);
            apply(&z, &mut w);
            zs.push(z);
            for _pass in 0..2 {
                for (i, vi) in basis.iter().enumerate() {
                    let hij = dot(&w, vi);
                    hess[i * m + k] += hij;
                    axpy(-hij, vi, &mut w);
                }
            }
            let hnext = norm2(&w);
            hess[(k + 1) * m + k] = hnext;
            for i in 0..k {
                let (a, bb) = (hess[i * m + k], hess[(i + 1) * m + k]);
                hess[i * m + k] = cs[i] * a + sn[i] * bb;
                hess[(i + 1) * m + k] = -sn[i] * a + cs[i] * bb;
            }
            let (a, bb) = (hess[k * m + k], hess[(k + 1) * m + k]);
            let denom = a.hypot(bb);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = a / denom;
                sn[k] = bb / denom;
            }
            hess[k * m + k] = denom;
            hess[(k + 1) * m + k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            total += 1;
            k += 1;
            if g[k].abs() <= opts.abs_tol || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        // back substitution on the k x k triangle
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for (jj, yj) in y.iter().enumerate().take(k).skip(i + 1) {
                s -= hess[i * m + jj] * yj;
            }
            y[i] = s / hess[i * m + i];
        }
        for (yi, z) in y.iter().zip(&zs) {
            axpy(*yi, z, x);
        }
        hess.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Preconditioned conjugate gradients for a symmetric positive (semi)definite
/// operator. `x` holds the initial guess on entry.
pub fn pcg(
    apply: &mut dyn FnMut(&[f64], &mut [f64]),
    precond: &mut dyn FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<KrylovStats> {
    let n = b.len();
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r);
    let mut it = 0;
    while res > opts.abs_tol {
        if it >= opts.max_iter || !res.is_finite() {
            return Err(Error::NotConverged {
                solver: "pcg",
                iterations: it,
                residual: res,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotConverged {
                solver: "pcg (indefinite operator)",
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        it += 1;
        // refresh the recursive residual periodically
        if it % 50 == 0 {
            apply(x, &mut ap);
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        res = norm2(&r);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(KrylovStats {
        iterations: it,
        residual: res,
    })
}

/// Eigenvalues of a small dense symmetric matrix (row-major) by cyclic
/// Jacobi rotations.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() < 1e-15 * (1.0 + norm2(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.5));
            }
        }
        Csr::from_triplets(n, n, &t)
    }

    #[test]
    fn csr_sums_duplicates_and_transposes() {
        let a = Csr::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, -1.0), (1, 0, 4.0)]);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.to_dense(), vec![0.0, 3.0, 0.0, 4.0, 0.0, -1.0]);
        let at = a.transpose();
        assert_eq!(at.to_dense(), vec![0.0, 4.0, 3.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 50;
        let a = tridiag(n);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.matvec(&xs, &mut b);
        let mut x = vec![0.0; n];
        let opts = KrylovOptions {
            abs_tol: 1e-12,
            max_iter: 200,
            restart: 10,
        };
        let stats = gmres(
            &mut |v, o| a.matvec(v, o),
            &mut |v, o| o.copy_from_slice(v),
            &b,
            &mut x,
            opts,
        )
        .unwrap();
        assert!(stats.residual <= 1e-12);
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn pcg_solves_spd_system() {
        let n = 40;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.5));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = Csr::from_triplets(n, n, &t);
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut x = vec![0.0; n];
        let opts = KrylovOptions {
            abs_tol: 1e-11,
            max_iter: 200,
            restart: 0,
        };
        pcg(
            &mut |v, o| a.matvec(v, o),
            &mut |v, o| o.copy_from_slice(v),
            &b,
            &mut x,
            opts,
        )
        .unwrap();
        let mut ax = vec![0.0; n];
        a.matvec(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = [2.0, 1.0, 1.0, 2.0];
        let mut e = symmetric_eigenvalues(&a, 2);
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }
}
