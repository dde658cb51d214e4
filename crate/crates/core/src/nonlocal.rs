//! Discrete nonlocal bilinear form
//! `E(u, v) = ∫∫ (u(x) - u(y)) (v(x) - v(y)) k(x, y, x - y) dx dy`
//! for cell-wise constant fields, and the induced operator.
//!
//! The form is assembled pair by pair as `K += w_ij (e_i - e_j)(e_i - e_j)^T`
//! over ordered pairs `i != j`, where `w_ij` approximates the kernel integral
//! over the product of the two cells. Symmetry, positive semidefiniteness and
//! vanishing row sums therefore hold by construction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::grid::{CellField, Grid};
use crate::kernel::{power_kernel, KernelSpec};
use crate::linalg::{self, KrylovOptions, KrylovStats};
use crate::spectral::CosineBasis;

/// Largest grid (in cells) for which the dense form is assembled.
pub const MAX_DENSE_CELLS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureOptions {
    /// Pairs whose cell indices differ by at most this many cells along both
    /// axes use sub-cell quadrature.
    pub near_radius: usize,
    /// Sub-cells per axis used for near pairs.
    pub sub_cells: usize,
    /// Pairs whose centers are farther apart than this are dropped.
    pub cutoff: Option<f64>,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            near_radius: 2,
            sub_cells: 4,
            cutoff: None,
        }
    }
}

impl QuadratureOptions {
    /// One-point rule at the cell centers for every pair.
    pub fn midpoint() -> Self {
        Self {
            near_radius: 0,
            sub_cells: 1,
            cutoff: None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.sub_cells == 0 {
            return Err(Error::param("quadrature", "sub_cells must be at least 1"));
        }
        if let Some(c) = self.cutoff {
            if !(c > 0.0) {
                return Err(Error::param("quadrature", format!("cutoff must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Assembled symmetric matrix `K` with `u^T K v ≈ E(u, v)`.
#[derive(Debug)]
pub struct NonlocalForm {
    grid: Grid,
    quad: QuadratureOptions,
    /// Row-major `n x n`.
    matrix: Vec<f64>,
    conv: Option<Convolution>,
    basis: OnceLock<CosineBasis>,
    profile: OnceLock<Vec<f64>>,
}

/// Integral of the pure power kernel (times omega) over a pair of cells.
struct PairQuadrature<'a> {
    grid: &'a Grid,
    spec: &'a KernelSpec,
    quad: QuadratureOptions,
    offsets: Vec<[f64; 2]>,
    sub_weight: f64,
}

impl<'a> PairQuadrature<'a> {
    fn new(grid: &'a Grid, spec: &'a KernelSpec, quad: QuadratureOptions) -> Self {
        let r = quad.sub_cells;
        let mut offsets = Vec::with_capacity(r * r);
        for b in 0..r {
            for a in 0..r {
                offsets.push([
                    ((a as f64 + 0.5) / r as f64 - 0.5) * grid.hx,
                    ((b as f64 + 0.5) / r as f64 - 0.5) * grid.hy,
                ]);
            }
        }
        let sub_area = grid.cell_area() / (r * r) as f64;
        Self {
            grid,
            spec,
            quad,
            offsets,
            sub_weight: sub_area * sub_area,
        }
    }

    fn is_near(&self, di: usize, dj: usize) -> bool {
        di.max(dj) <= self.quad.near_radius
    }

    /// Ordered-pair weight for cells centered at `x` and `y` whose index
    /// offsets are `(di, dj)`; `constant` short-circuits omega.
    fn weight(&self, x: [f64; 2], y: [f64; 2], di: usize, dj: usize, constant: Option<f64>) -> f64 {
        if let Some(cut) = self.quad.cutoff {
            let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
            if d > cut {
                return 0.0;
            }
        }
        let alpha = self.spec.alpha;
        let omega = |p: [f64; 2], q: [f64; 2]| match constant {
            Some(c) => c,
            None => self.spec.omega.weight(p, q),
        };
        if !self.is_near(di, dj) || self.quad.sub_cells == 1 {
            let a = self.grid.cell_area();
            return a * a * omega(x, y) * power_kernel(x, y, alpha);
        }
        let mut acc = 0.0;
        for oa in &self.offsets {
            let p = [x[0] + oa[0], x[1] + oa[1]];
            for ob in &self.offsets {
                let q = [y[0] + ob[0], y[1] + ob[1]];
                acc += omega(p, q) * power_kernel(p, q, alpha);
            }
        }
        acc * self.sub_weight
    }
}

impl NonlocalForm {
    pub fn assemble(grid: &Grid, spec: &KernelSpec, quad: QuadratureOptions) -> Result<Self> {
        quad.validate()?;
        let n = grid.num_cells();
        if n > MAX_DENSE_CELLS {
            return Err(Error::MemoryBudget {
                cells: n,
                limit: MAX_DENSE_CELLS,
            });
        }
        let pq = PairQuadrature::new(grid, spec, quad);
        let mut matrix = vec![0.0; n * n];
        let conv = match spec.omega.constant_value() {
            Some(c) => {
                // translation invariant: one weight per |offset|
                let (nx, ny) = (grid.nx, grid.ny);
                let mut table = vec![0.0; nx * ny];
                for dj in 0..ny {
                    for di in 0..nx {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let y = [di as f64 * grid.hx, dj as f64 * grid.hy];
                        table[di + nx * dj] = pq.weight([0.0, 0.0], y, di, dj, Some(c));
                    }
                }
                for a in 0..n {
                    let (ia, ja) = (a % nx, a / nx);
                    for b in 0..n {
                        if a != b {
                            let (ib, jb) = (b % nx, b / nx);
                            let w = table[ia.abs_diff(ib) + nx * ja.abs_diff(jb)];
                            matrix[a * n + b] = -2.0 * w;
                        }
                    }
                }
                fill_diagonal(&mut matrix, n);
                Some(Convolution::new(grid, &table, &matrix))
            }
            None => {
                let nx = grid.nx;
                for a in 0..n {
                    let xa = grid.cell_center(a);
                    let (ia, ja) = (a % nx, a / nx);
                    for b in (a + 1)..n {
                        let (ib, jb) = (b % nx, b / nx);
                        let w = pq.weight(xa, grid.cell_center(b), ia.abs_diff(ib), ja.abs_diff(jb), None);
                        // ordered pairs (a, b) and (b, a) carry equal weight by symmetry of omega
                        matrix[a * n + b] = -2.0 * w;
                        matrix[b * n + a] = -2.0 * w;
                    }
                }
                fill_diagonal(&mut matrix, n);
                None
            }
        };
        Ok(Self {
            grid: *grid,
            quad,
            matrix,
            conv,
            basis: OnceLock::new(),
            profile: OnceLock::new(),
        })
    }

    /// Form with the pure kernel `|z|^(-d - alpha)` and the same quadrature.
    pub fn gagliardo_reference(grid: &Grid, alpha: f64, quad: QuadratureOptions) -> Result<Self> {
        Self::assemble(grid, &KernelSpec::fractional(alpha)?, quad)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn quadrature(&self) -> QuadratureOptions {
        self.quad
    }

    pub fn size(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size() + j]
    }

    pub fn dense(&self) -> &[f64] {
        &self.matrix
    }

    pub fn has_fast_apply(&self) -> bool {
        self.conv.is_some()
    }

    pub fn max_abs_entry(&self) -> f64 {
        linalg::norm_inf(&self.matrix)
    }

    /// `K u` using the fastest available path. Since `K 1 = 0`, the mean of
    /// `u` is removed first so constants map to exactly zero.
    pub fn matvec(&self, u: &[f64], out: &mut [f64]) {
        if u.iter().all(|&x| x == u[0]) {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let mut u0 = u.to_vec();
        linalg::remove_mean(&mut u0);
        match &self.conv {
            Some(c) => c.apply(&u0, out),
            None => self.dense_matvec(&u0, out),
        }
    }

    /// `K u` by dense row-wise summation.
    pub fn dense_matvec(&self, u: &[f64], out: &mut [f64]) {
        let n = self.size();
        for (i, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(&self.matrix[i * n..(i + 1) * n], u);
        }
    }

    /// `u^T K v`.
    pub fn apply_bilinear(&self, u: &CellField, v: &CellField) -> Result<f64> {
        check_len("cell field", self.size(), u.len())?;
        check_len("cell field", self.size(), v.len())?;
        Ok(self.bilinear(u, v))
    }

    pub(crate) fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut kv = vec![0.0; self.size()];
        self.matvec(v, &mut kv);
        linalg::dot(u, &kv)
    }

    /// Riesz representative of the operator: `K u / |cell|`.
    pub fn apply_operator(&self, u: &CellField) -> Result<CellField> {
        check_len("cell field", self.size(), u.len())?;
        let mut out = vec![0.0; self.size()];
        self.operator_into(u, &mut out);
        Ok(CellField::wrap(out))
    }

    pub(crate) fn operator_into(&self, u: &[f64], out: &mut [f64]) {
        self.matvec(u, out);
        let inv = 1.0 / self.grid.cell_area();
        out.iter_mut().for_each(|v| *v *= inv);
    }

    pub(crate) fn basis(&self) -> &CosineBasis {
        self.basis.get_or_init(|| CosineBasis::new(&self.grid))
    }

    /// Approximate diagonal of `K / |cell|` in the cosine basis.
    ///
    /// Rayleigh quotients are computed exactly for a sample of axis and
    /// diagonal modes and interpolated log-log in the Laplacian eigenvalue.
    pub fn spectral_profile(&self) -> &[f64] {
        self.profile.get_or_init(|| {
            let basis = self.basis();
            let (nx, ny) = (self.grid.nx, self.grid.ny);
            let mut picks: Vec<usize> = Vec::new();
            let mut p = 1usize;
            while p < nx.max(ny) {
                picks.push(p);
                p = if p < 4 { p + 1 } else { p + p / 2 };
            }
            picks.push(nx.max(ny) - 1);
            let mut modes: Vec<(usize, usize)> = Vec::new();
            for &p in &picks {
                if p < nx {
                    modes.push((p, 0));
                }
                if p < ny {
                    modes.push((0, p));
                }
                if p < nx && p < ny {
                    modes.push((p, p));
                }
            }
            modes.push((nx - 1, ny - 1));
            modes.sort_unstable();
            modes.dedup();
            modes.retain(|&(p, q)| p + q > 0);

            let lam = basis.eigenvalues();
            let mut samples: Vec<(f64, f64)> = Vec::new();
            let mut ku = vec![0.0; self.size()];
            for &(p, q) in &modes {
                let m = basis.mode(p, q);
                self.operator_into(&m, &mut ku);
                let rq = linalg::dot(&m, &ku).max(f64::MIN_POSITIVE);
                samples.push((lam[basis.mode_index(p, q)], rq));
            }
            samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut merged: Vec<(f64, f64)> = Vec::new();
            let mut k = 0;
            while k < samples.len() {
                let (l0, _) = samples[k];
                let mut acc = 0.0;
                let mut cnt = 0.0;
                while k < samples.len() && (samples[k].0 - l0).abs() <= 1e-9 * l0 {
                    acc += samples[k].1;
                    cnt += 1.0;
                    k += 1;
                }
                merged.push((l0.ln(), (acc / cnt).ln()));
            }
            lam.iter()
                .map(|&l| {
                    if l <= 0.0 {
                        0.0
                    } else {
                        interpolate_loglog(&merged, l.ln()).exp()
                    }
                })
                .collect()
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.size();
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for v in &self.matrix {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a form written by [`NonlocalForm::save`]. `translation_invariant`
    /// restores the FFT application path, which must match how the form was
    /// assembled.
    pub fn load(path: &Path, grid: &Grid, quad: QuadratureOptions, translation_invariant: bool) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let cols = u64::from_le_bytes(word) as usize;
        let n = grid.num_cells();
        if rows != n || cols != n {
            return Err(bad(format!("dimensions {rows} x {cols}, expected {n} x {n}")));
        }
        let mut bytes = vec![0u8; n * n * 8];
        r.read_exact(&mut bytes)?;
        let matrix: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let conv = if translation_invariant {
            let table: Vec<f64> = (0..n).map(|b| if b == 0 { 0.0 } else { -0.5 * matrix[b] }).collect();
            Some(Convolution::new(grid, &table, &matrix))
        } else {
            None
        };
        Ok(Self {
            grid: *grid,
            quad,
            matrix,
            conv,
            basis: OnceLock::new(),
            profile: OnceLock::new(),
        })
    }

    /// Loads the form from `dir` when a matching cache file exists,
    /// otherwise assembles and stores it.
    pub fn assemble_cached(grid: &Grid, spec: &KernelSpec, quad: QuadratureOptions, dir: &Path) -> Result<Self> {
        let path = cache_path(dir, grid, spec, quad);
        let invariant = spec.omega.constant_value().is_some();
        if path.exists() {
            if let Ok(form) = Self::load(&path, grid, quad, invariant) {
                return Ok(form);
            }
        }
        let form = Self::assemble(grid, spec, quad)?;
        std::fs::create_dir_all(dir)?;
        form.save(&path)?;
        Ok(form)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"NLFORM01";

pub fn cache_key(grid: &Grid, spec: &KernelSpec, quad: QuadratureOptions) -> String {
    let text = format!(
        "nx={};ny={};lx={:e};ly={:e};alpha={:e};omega={};near={};sub={};cutoff={:?}",
        grid.nx,
        grid.ny,
        grid.lx,
        grid.ly,
        spec.alpha,
        spec.omega.describe(),
        quad.near_radius,
        quad.sub_cells,
        quad.cutoff
    );
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, grid: &Grid, spec: &KernelSpec, quad: QuadratureOptions) -> PathBuf {
    dir.join(format!("nlform-{}.bin", &cache_key(grid, spec, quad)[..16]))
}

fn fill_diagonal(matrix: &mut [f64], n: usize) {
    for a in 0..n {
        let row = &matrix[a * n..(a + 1) * n];
        let s: f64 = row.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, v)| v).sum();
        matrix[a * n + a] = -s;
    }
}

fn interpolate_loglog(points: &[(f64, f64)], x: f64) -> f64 {
    match points.len() {
        0 => 0.0,
        1 => points[0].1,
        len => {
            let k = match points.iter().position(|p| p.0 >= x) {
                Some(0) => 1,
                Some(k) => k,
                None => len - 1,
            };
            let (x0, y0) = points[k - 1];
            let (x1, y1) = points[k];
            if x1 == x0 {
                return y1;
            }
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

/// FFT application of a translation-invariant form,
/// `K u = diag(K) u - 2 (W * u)` with `W` the zero-padded offset table.
struct Convolution {
    nx: usize,
    ny: usize,
    mx: usize,
    my: usize,
    diag: Vec<f64>,
    kernel_hat: Vec<Complex<f64>>,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Convolution({}x{} padded to {}x{})",
            self.nx, self.ny, self.mx, self.my
        )
    }
}

impl Convolution {
    /// `table[di + nx * dj]` is the ordered-pair weight at offset `(±di, ±dj)`.
    fn new(grid: &Grid, table: &[f64], matrix: &[f64]) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let (mx, my) = (2 * nx, 2 * ny);
        let n = nx * ny;
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(mx);
        let row_inv = planner.plan_fft_inverse(mx);
        let col_fwd = planner.plan_fft_forward(my);
        let col_inv = planner.plan_fft_inverse(my);
        let mut buf = vec![Complex::new(0.0, 0.0); mx * my];
        for dj in 0..ny {
            for di in 0..nx {
                let w = table[di + nx * dj];
                for (sx, sy) in [(1i64, 1i64), (-1, 1), (1, -1), (-1, -1)] {
                    let x = (sx * di as i64).rem_euclid(mx as i64) as usize;
                    let y = (sy * dj as i64).rem_euclid(my as i64) as usize;
                    buf[x + mx * y] = Complex::new(w, 0.0);
                }
            }
        }
        let mut conv = Self {
            nx,
            ny,
            mx,
            my,
            diag: (0..n).map(|a| matrix[a * n + a]).collect(),
            kernel_hat: Vec::new(),
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
        };
        conv.kernel_hat = conv.forward(buf);
        conv
    }

    /// 2D forward transform; the result is stored column-major (transposed).
    fn forward(&self, mut buf: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        self.row_fwd.process(&mut buf);
        let mut t = vec![Complex::new(0.0, 0.0); self.mx * self.my];
        for y in 0..self.my {
            for x in 0..self.mx {
                t[y + self.my * x] = buf[x + self.mx * y];
            }
        }
        self.col_fwd.process(&mut t);
        t
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (nx, ny, mx, my) = (self.nx, self.ny, self.mx, self.my);
        let mut buf = vec![Complex::new(0.0, 0.0); mx * my];
        for j in 0..ny {
            for i in 0..nx {
                buf[i + mx * j] = Complex::new(u[i + nx * j], 0.0);
            }
        }
        let mut t = self.forward(buf);
        for (a, k) in t.iter_mut().zip(&self.kernel_hat) {
            *a *= k;
        }
        self.col_inv.process(&mut t);
        let mut buf = vec![Complex::new(0.0, 0.0); mx * my];
        for x in 0..mx {
            for y in 0..my {
                buf[x + mx * y] = t[y + my * x];
            }
        }
        self.row_inv.process(&mut buf);
        let scale = 1.0 / (mx * my) as f64;
        for j in 0..ny {
            for i in 0..nx {
                let c = i + nx * j;
                out[c] = self.diag[c] * u[c] - 2.0 * scale * buf[i + mx * j].re;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegularizedSolution {
    pub u: CellField,
    /// `‖θ(-Δ)u + Ku/|cell| - g‖₂ / ‖g‖₂`.
    pub relative_residual: f64,
    pub stats: KrylovStats,
}

/// Mean-zero solution of `θ(-Δ_N)u + K u / |cell| = g` for mean-zero `g`.
pub fn regularized_solve(form: &NonlocalForm, theta: f64, g: &CellField, tol: f64) -> Result<RegularizedSolution> {
    let grid = *form.grid();
    check_len("cell field", grid.num_cells(), g.len())?;
    if !(theta >= 0.0 && theta.is_finite()) {
        return Err(Error::param(
            "regularized solve",
            format!("theta must be >= 0, got {theta}"),
        ));
    }
    let gnorm = linalg::norm2(g);
    let mean = grid.mean(g);
    if mean.abs() > 1e-12 * (1.0 + g.max_abs()) {
        return Err(Error::MeanCondition(format!(
            "right-hand side has mean {mean:e}, expected 0"
        )));
    }
    let n = grid.num_cells();
    if gnorm == 0.0 {
        return Ok(RegularizedSolution {
            u: CellField::zeros(&grid),
            relative_residual: 0.0,
            stats: KrylovStats::default(),
        });
    }
    let lap = grid.neumann_laplacian();
    let basis = form.basis();
    let profile = form.spectral_profile();
    let symbol: Vec<f64> = basis
        .eigenvalues()
        .iter()
        .zip(profile)
        .map(|(&l, &d)| if l <= 0.0 { 0.0 } else { 1.0 / (theta * l + d) })
        .collect();
    let mut tmp = vec![0.0; n];
    let mut apply = |x: &[f64], out: &mut [f64]| {
        form.operator_into(x, out);
        lap.apply_into(x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o -= theta * t;
        }
        linalg::remove_mean(out);
    };
    let mut precond = |r: &[f64], z: &mut [f64]| basis.apply_diagonal(&symbol, r, z);
    let mut rhs = g.to_vec();
    linalg::remove_mean(&mut rhs);
    let mut u = vec![0.0; n];
    let opts = KrylovOptions {
        abs_tol: 0.5 * tol * gnorm,
        max_iter: 2000,
        restart: 0,
    };
    let stats = linalg::pcg(&mut apply, &mut precond, &rhs, &mut u, opts)?;
    linalg::remove_mean(&mut u);
    let mut r = vec![0.0; n];
    apply(&u, &mut r);
    for (ri, gi) in r.iter_mut().zip(g.iter()) {
        *ri -= gi;
    }
    let relative_residual = linalg::norm2(&r) / gnorm;
    if relative_residual > tol {
        return Err(Error::NotConverged {
            solver: "regularized solve",
            iterations: stats.iterations,
            residual: relative_residual,
        });
    }
    Ok(RegularizedSolution {
        u: CellField::wrap(u),
        relative_residual,
        stats,
    })
}
