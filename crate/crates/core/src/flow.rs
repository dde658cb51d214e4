//! Variable-density momentum balance on the MAC grid: density law, mass
//! flux, skew-symmetric transport, viscous stress and the constrained
//! velocity-pressure solve.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{CellField, FaceField, Grid};
use crate::linalg::{self, Csr, KrylovOptions};
use crate::spectral::{dst1_eigenvalues, dst1_matrix, dst2_eigenvalues, dst2_matrix, CosineBasis, Separable};

/// Coefficient depending on the phase field, evaluated at `s` clamped to
/// `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientLaw {
    Constant {
        value: f64,
    },
    /// Linear interpolation between the pure-phase values at `s = -1` and `s = 1`.
    Linear {
        minus: f64,
        plus: f64,
    },
}

impl Default for CoefficientLaw {
    fn default() -> Self {
        CoefficientLaw::Constant { value: 1.0 }
    }
}

impl CoefficientLaw {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            CoefficientLaw::Constant { value } => value,
            CoefficientLaw::Linear { minus, plus } => {
                let s = s.clamp(-1.0, 1.0);
                0.5 * ((1.0 - s) * minus + (1.0 + s) * plus)
            }
        }
    }

    /// Bounds over `[-1, 1]`.
    pub fn range(&self) -> (f64, f64) {
        match *self {
            CoefficientLaw::Constant { value } => (value, value),
            CoefficientLaw::Linear { minus, plus } => (minus.min(plus), minus.max(plus)),
        }
    }

    fn validate(&self, section: &'static str, name: &str) -> Result<()> {
        let (lo, hi) = self.range();
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::param(
                section,
                format!("{name} must be positive and bounded, got range [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidParams {
    pub rho1: f64,
    pub rho2: f64,
    pub eta: CoefficientLaw,
    pub mobility: CoefficientLaw,
}

impl Default for FluidParams {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            rho2: 1.0,
            eta: CoefficientLaw::default(),
            mobility: CoefficientLaw::default(),
        }
    }
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho1 > 0.0 && self.rho2 > 0.0 && self.rho1.is_finite() && self.rho2.is_finite()) {
            return Err(Error::param(
                "fluid",
                format!(
                    "densities must be positive, got rho1 = {}, rho2 = {}",
                    self.rho1, self.rho2
                ),
            ));
        }
        self.eta.validate("fluid", "eta")?;
        self.mobility.validate("fluid", "mobility")
    }

    pub fn density(&self, s: f64) -> f64 {
        0.5 * (self.rho1 + self.rho2) + 0.5 * (self.rho2 - self.rho1) * s
    }

    /// Prefactor `-(rho2 - rho1) / 2` of the mass flux.
    pub fn flux_factor(&self) -> f64 {
        -0.5 * (self.rho2 - self.rho1)
    }
}

/// Pointwise density of each cell.
pub fn density_of(phi: &CellField, fp: &FluidParams) -> Result<CellField> {
    if let Some(&bad) = phi.iter().find(|s| !(s.abs() <= 1.0)) {
        return Err(Error::DomainViolation {
            value: bad,
            interval: "[-1, 1]",
        });
    }
    Ok(CellField::wrap(phi.iter().map(|&s| fp.density(s)).collect()))
}

/// Mobility on faces, evaluated at the face average of `phi_s`.
pub fn face_mobility(phi_s: &[f64], fp: &FluidParams, grid: &Grid) -> Vec<f64> {
    grid.cell_to_faces(phi_s)
        .into_iter()
        .map(|s| fp.mobility.eval(s))
        .collect()
}

/// Relative mass flux `-(rho2 - rho1)/2 m(phi_s) ∇mu` on faces.
pub fn compute_flux(mu: &CellField, phi_s: &CellField, fp: &FluidParams, grid: &Grid) -> Result<FaceField> {
    check_len("mu", grid.num_cells(), mu.len())?;
    check_len("phi_s", grid.num_cells(), phi_s.len())?;
    let m = face_mobility(phi_s, fp, grid);
    Ok(FaceField::wrap(flux_from_mobility(mu, &m, fp.flux_factor(), grid)))
}

pub(crate) fn flux_from_mobility(mu: &[f64], m_face: &[f64], factor: f64, grid: &Grid) -> Vec<f64> {
    let mut g = vec![0.0; grid.num_faces()];
    grid.gradient_into(mu, &mut g);
    for (gi, mi) in g.iter_mut().zip(m_face) {
        *gi *= factor * mi;
    }
    g
}

/// Skew-symmetric transport `C = (T - T^T) / 2` by the face mass flux `b`,
/// where `T` is the centered conservative transport on interior faces.
/// Each control-volume face between unknowns `f` and `g` with outward flux
/// `F` contributes `C[f][g] = F / (2 |cell|)` and `C[g][f] = -F / (2 |cell|)`.
pub fn convection_matrix(rho_s: &[f64], w: &[f64], j: &[f64], grid: &Grid) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let rf = grid.cell_to_faces(rho_s);
    let b: Vec<f64> = (0..grid.num_faces()).map(|f| rf[f] * w[f] + j[f]).collect();
    let scale = 0.5 / grid.cell_area();
    let mut t = Vec::new();
    let mut pair = |f: usize, g: usize, flux: f64| {
        if flux != 0.0 {
            t.push((f, g, flux * scale));
            t.push((g, f, -flux * scale));
        }
    };
    // x-velocity control volumes
    for jj in 0..ny {
        for i in 1..nx.saturating_sub(1) {
            let flux = grid.hy * 0.5 * (b[grid.x_face(i, jj)] + b[grid.x_face(i + 1, jj)]);
            pair(grid.x_face(i, jj), grid.x_face(i + 1, jj), flux);
        }
    }
    for jj in 0..ny.saturating_sub(1) {
        for i in 1..nx {
            let flux = grid.hx * 0.5 * (b[grid.y_face(i - 1, jj + 1)] + b[grid.y_face(i, jj + 1)]);
            pair(grid.x_face(i, jj), grid.x_face(i, jj + 1), flux);
        }
    }
    // y-velocity control volumes
    for jj in 1..ny {
        for i in 0..nx.saturating_sub(1) {
            let flux = grid.hy * 0.5 * (b[grid.x_face(i + 1, jj - 1)] + b[grid.x_face(i + 1, jj)]);
            pair(grid.y_face(i, jj), grid.y_face(i + 1, jj), flux);
        }
    }
    for jj in 1..ny.saturating_sub(1) {
        for i in 0..nx {
            let flux = grid.hx * 0.5 * (b[grid.y_face(i, jj)] + b[grid.y_face(i, jj + 1)]);
            pair(grid.y_face(i, jj), grid.y_face(i, jj + 1), flux);
        }
    }
    Csr::from_triplets(grid.num_faces(), grid.num_faces(), &t)
}

/// `C(w, J) v` with transport flux `rho_s w + J`.
pub fn convection_apply(
    rho_s: &CellField,
    w: &FaceField,
    j: &FaceField,
    v: &FaceField,
    grid: &Grid,
) -> Result<FaceField> {
    check_len("rho_s", grid.num_cells(), rho_s.len())?;
    for (what, f) in [("w", w), ("J", j), ("v", v)] {
        check_len(what, grid.num_faces(), f.len())?;
    }
    let c = convection_matrix(rho_s, w, j, grid);
    let mut out = vec![0.0; grid.num_faces()];
    c.matvec(v, &mut out);
    Ok(FaceField::wrap(out))
}

/// Viscous operator `-div(2 eta Dv)` in the factored form
/// `V = S^T diag(weights) S / |cell|`, where `S` maps face velocities to the
/// symmetric gradient (normal strains at cells, shear strain at nodes) and
/// the weights are `2 eta` times the quadrature areas. No-slip walls enter
/// through odd ghost values of the tangential velocity.
#[derive(Debug, Clone)]
pub struct ViscousOperator {
    strain: Csr,
    strain_t: Csr,
    weights: Vec<f64>,
    inv_area: f64,
}

fn strain_matrix(grid: &Grid) -> Csr {
    let (nx, ny) = (grid.nx, grid.ny);
    let nc = grid.num_cells();
    let mut t = Vec::new();
    let interior = |f: usize| !grid.is_boundary_face(f);
    for jj in 0..ny {
        for i in 0..nx {
            let c = grid.cell(i, jj);
            for (f, s) in [(grid.x_face(i + 1, jj), 1.0), (grid.x_face(i, jj), -1.0)] {
                if interior(f) {
                    t.push((c, f, s / grid.hx));
                }
            }
            for (f, s) in [(grid.y_face(i, jj + 1), 1.0), (grid.y_face(i, jj), -1.0)] {
                if interior(f) {
                    t.push((nc + c, f, s / grid.hy));
                }
            }
        }
    }
    for jj in 0..=ny {
        for i in 0..=nx {
            let r = 2 * nc + i + (nx + 1) * jj;
            // 0.5 * du/dy
            if i > 0 && i < nx {
                if jj < ny {
                    let s = if jj == 0 { 2.0 } else { 1.0 };
                    t.push((r, grid.x_face(i, jj), 0.5 * s / grid.hy));
                }
                if jj > 0 {
                    let s = if jj == ny { 2.0 } else { 1.0 };
                    t.push((r, grid.x_face(i, jj - 1), -0.5 * s / grid.hy));
                }
            }
            // 0.5 * dv/dx
            if jj > 0 && jj < ny {
                if i < nx {
                    let s = if i == 0 { 2.0 } else { 1.0 };
                    t.push((r, grid.y_face(i, jj), 0.5 * s / grid.hx));
                }
                if i > 0 {
                    let s = if i == nx { 2.0 } else { 1.0 };
                    t.push((r, grid.y_face(i - 1, jj), -0.5 * s / grid.hx));
                }
            }
        }
    }
    Csr::from_triplets(2 * nc + (nx + 1) * (ny + 1), grid.num_faces(), &t)
}

impl ViscousOperator {
    /// `eta` holds cell viscosities; node values are means of the adjacent cells.
    pub fn new(grid: &Grid, eta: &[f64]) -> Result<Self> {
        let (nx, ny) = (grid.nx, grid.ny);
        let nc = grid.num_cells();
        check_len("eta", nc, eta.len())?;
        if let Some(&bad) = eta.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::param("fluid", format!("viscosity must be positive, got {bad}")));
        }
        let a = grid.cell_area();
        let mut weights = vec![0.0; 2 * nc + (nx + 1) * (ny + 1)];
        for c in 0..nc {
            weights[c] = 2.0 * eta[c] * a;
            weights[nc + c] = 2.0 * eta[c] * a;
        }
        for jj in 0..=ny {
            for i in 0..=nx {
                let mut sum = 0.0;
                let mut cnt = 0.0;
                for (ci, cj) in [
                    (i.wrapping_sub(1), jj.wrapping_sub(1)),
                    (i, jj.wrapping_sub(1)),
                    (i.wrapping_sub(1), jj),
                    (i, jj),
                ] {
                    if ci < nx && cj < ny {
                        sum += eta[grid.cell(ci, cj)];
                        cnt += 1.0;
                    }
                }
                let mut wn = a;
                if i == 0 || i == nx {
                    wn *= 0.5;
                }
                if jj == 0 || jj == ny {
                    wn *= 0.5;
                }
                // 2 eta * 2 e12^2 accounts for both off-diagonal tensor entries
                weights[2 * nc + i + (nx + 1) * jj] = 4.0 * (sum / cnt) * wn;
            }
        }
        let strain = strain_matrix(grid);
        Ok(Self {
            strain_t: strain.transpose(),
            strain,
            weights,
            inv_area: 1.0 / a,
        })
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let mut e = vec![0.0; self.weights.len()];
        self.strain.matvec(v, &mut e);
        for (ei, wi) in e.iter_mut().zip(&self.weights) {
            *ei *= wi * self.inv_area;
        }
        self.strain_t.matvec(&e, out);
    }

    /// `∫ 2 eta |Dv|^2`, equal to `⟨V v, v⟩`.
    pub fn dissipation(&self, v: &[f64]) -> f64 {
        let mut e = vec![0.0; self.weights.len()];
        self.strain.matvec(v, &mut e);
        e.iter().zip(&self.weights).map(|(x, w)| w * x * x).sum()
    }

    /// Assembled `V` as triplets.
    fn triplets(&self, out: &mut Vec<(usize, usize, f64)>) {
        for r in 0..self.weights.len() {
            let w = self.weights[r] * self.inv_area;
            let row: Vec<(usize, f64)> = self.strain.row(r).collect();
            for &(f, sf) in &row {
                for &(g, sg) in &row {
                    out.push((f, g, w * sf * sg));
                }
            }
        }
    }

    pub fn to_csr(&self, nf: usize) -> Csr {
        let mut t = Vec::new();
        self.triplets(&mut t);
        Csr::from_triplets(nf, nf, &t)
    }
}

/// Cell viscosities `eta(phi)`.
pub fn viscosity_of(phi: &[f64], fp: &FluidParams) -> Vec<f64> {
    phi.iter().map(|&s| fp.eta.eval(s)).collect()
}

/// Velocity and pressure at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub v: FaceField,
    pub p: CellField,
}

impl FlowState {
    pub fn at_rest(grid: &Grid) -> Self {
        Self {
            v: FaceField::zeros(grid),
            p: CellField::zeros(grid),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MomentumOptions {
    /// Bound on the RMS of `h` times the momentum residual.
    pub tol_mom: f64,
    /// Bound on the largest cell divergence.
    pub tol_div: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for MomentumOptions {
    fn default() -> Self {
        Self {
            tol_mom: 1e-9,
            tol_div: 1e-8,
            max_iter: 2000,
            restart: 80,
        }
    }
}

/// Data of one linearized momentum solve. `w` is the transporting velocity.
#[derive(Debug, Clone, Copy)]
pub struct MomentumInput<'a> {
    pub v_k: &'a [f64],
    pub rho_k: &'a [f64],
    pub rho_new: &'a [f64],
    pub rho_s: &'a [f64],
    pub eta_k: &'a [f64],
    pub flux: &'a [f64],
    pub phi_s: &'a [f64],
    pub mu: &'a [f64],
    pub w: &'a [f64],
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct MomentumSolution {
    pub flow: FlowState,
    /// RMS over interior faces of `h (A v + G p - f)`.
    pub momentum_residual: f64,
    pub max_divergence: f64,
    pub iterations: usize,
}

/// Assembled linear momentum operator and right-hand side.
pub(crate) struct MomentumSystem {
    grid: Grid,
    h: f64,
    a: Csr,
    rhs: Vec<f64>,
    rho_bar_mean: f64,
    eta_mean: f64,
    boundary: Vec<bool>,
}

impl MomentumSystem {
    pub(crate) fn new(inp: &MomentumInput<'_>, grid: &Grid) -> Result<Self> {
        let nc = grid.num_cells();
        let nf = grid.num_faces();
        for (what, f) in [
            ("rho_k", inp.rho_k),
            ("rho_new", inp.rho_new),
            ("rho_s", inp.rho_s),
            ("eta_k", inp.eta_k),
            ("phi_s", inp.phi_s),
            ("mu", inp.mu),
        ] {
            check_len(what, nc, f.len())?;
        }
        for (what, f) in [("v_k", inp.v_k), ("J", inp.flux), ("w", inp.w)] {
            check_len(what, nf, f.len())?;
        }
        if !(inp.h > 0.0) {
            return Err(Error::param("time", format!("h must be positive, got {}", inp.h)));
        }
        let h = inp.h;
        let rk = grid.cell_to_faces(inp.rho_k);
        let rn = grid.cell_to_faces(inp.rho_new);
        let ps = grid.cell_to_faces(inp.phi_s);
        let mut gmu = vec![0.0; nf];
        grid.gradient_into(inp.mu, &mut gmu);
        let boundary: Vec<bool> = (0..nf).map(|f| grid.is_boundary_face(f)).collect();

        let visc = ViscousOperator::new(grid, inp.eta_k)?;
        let conv = convection_matrix(inp.rho_s, inp.w, inp.flux, grid);
        let mut t = Vec::with_capacity(20 * nf);
        visc.triplets(&mut t);
        for r in 0..nf {
            for (c, v) in conv.row(r) {
                t.push((r, c, v));
            }
        }
        let mut rhs = vec![0.0; nf];
        let mut rho_bar_sum = 0.0;
        let mut interior = 0.0;
        for f in 0..nf {
            if boundary[f] {
                continue;
            }
            let rho_bar = 0.5 * (rn[f] + rk[f]);
            t.push((f, f, rho_bar / h));
            rhs[f] = rk[f] * inp.v_k[f] / h - ps[f] * gmu[f];
            rho_bar_sum += rho_bar;
            interior += 1.0;
        }
        let a = Csr::from_triplets(nf, nf, &t);
        Ok(Self {
            grid: *grid,
            h,
            a,
            rhs,
            rho_bar_mean: if interior > 0.0 { rho_bar_sum / interior } else { 1.0 },
            eta_mean: grid.mean(inp.eta_k),
            boundary,
        })
    }

    /// `A v + G p - f` on interior faces, zero on boundary faces.
    pub(crate) fn momentum_residual(&self, v: &[f64], p: &[f64]) -> Vec<f64> {
        let nf = self.grid.num_faces();
        let mut r = vec![0.0; nf];
        self.a.matvec(v, &mut r);
        let mut gp = vec![0.0; nf];
        self.grid.gradient_into(p, &mut gp);
        for f in 0..nf {
            r[f] = if self.boundary[f] {
                0.0
            } else {
                r[f] + gp[f] - self.rhs[f]
            };
        }
        r
    }

    fn interior_rms(&self, r: &[f64]) -> f64 {
        let n = self.boundary.iter().filter(|b| !**b).count().max(1);
        (r.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt()
    }

    pub(crate) fn solve(&self, guess: Option<&FlowState>, opts: MomentumOptions) -> Result<MomentumSolution> {
        let grid = self.grid;
        let nf = grid.num_faces();
        let nc = grid.num_cells();
        let h = self.h;
        let pre = BlockPreconditioner::new(&grid, self.rho_bar_mean / h, self.eta_mean);

        // momentum rows scaled by h so both blocks carry comparable units
        let mut apply = |x: &[f64], out: &mut [f64]| {
            let (v, p) = x.split_at(nf);
            let (ov, op) = out.split_at_mut(nf);
            self.a.matvec(v, ov);
            let mut gp = vec![0.0; nf];
            grid.gradient_into(p, &mut gp);
            for f in 0..nf {
                ov[f] = if self.boundary[f] { v[f] } else { h * (ov[f] + gp[f]) };
            }
            grid.divergence_into(v, op);
            op.iter_mut().for_each(|d| *d = -*d);
        };
        let mut precond = |r: &[f64], z: &mut [f64]| pre.apply(r, z, h, &self.boundary);

        let mut b = vec![0.0; nf + nc];
        for f in 0..nf {
            if !self.boundary[f] {
                b[f] = h * self.rhs[f];
            }
        }
        let mut x = vec![0.0; nf + nc];
        if let Some(g) = guess {
            x[..nf].copy_from_slice(&g.v);
            x[nf..].copy_from_slice(&g.p);
            for f in 0..nf {
                if self.boundary[f] {
                    x[f] = 0.0;
                }
            }
        }
        let nint = self.boundary.iter().filter(|b| !**b).count().max(1) as f64;
        let abs_tol = 0.5 * (opts.tol_mom * nint.sqrt()).min(opts.tol_div);
        let stats = linalg::gmres(
            &mut apply,
            &mut precond,
            &b,
            &mut x,
            KrylovOptions {
                abs_tol,
                max_iter: opts.max_iter,
                restart: opts.restart,
            },
        )?;
        let mut p = x.split_off(nf);
        let v = x;
        linalg::remove_mean(&mut p);
        let r = self.momentum_residual(&v, &p);
        let momentum_residual = h * self.interior_rms(&r);
        let mut div = vec![0.0; nc];
        grid.divergence_into(&v, &mut div);
        let max_divergence = linalg::norm_inf(&div);
        if momentum_residual > opts.tol_mom || max_divergence > opts.tol_div {
            return Err(Error::NotConverged {
                solver: "momentum",
                iterations: stats.iterations,
                residual: momentum_residual.max(max_divergence),
            });
        }
        Ok(MomentumSolution {
            flow: FlowState {
                v: FaceField::wrap(v),
                p: CellField::wrap(p),
            },
            momentum_residual,
            max_divergence,
            iterations: stats.iterations,
        })
    }
}

/// Block upper-triangular preconditioner: the pressure block uses the
/// mass and viscous parts of the Schur complement, the velocity block the
/// exact inverse of the constant-coefficient diagonal blocks in sine bases.
struct BlockPreconditioner {
    grid: Grid,
    cos: CosineBasis,
    schur_symbol: Vec<f64>,
    eta: f64,
    ux: Separable,
    uy: Separable,
    ux_symbol: Vec<f64>,
    uy_symbol: Vec<f64>,
}

impl BlockPreconditioner {
    fn new(grid: &Grid, mass: f64, eta: f64) -> Self {
        let (nx, ny) = (grid.nx, grid.ny);
        let cos = CosineBasis::new(grid);
        let schur_symbol = cos
            .eigenvalues()
            .iter()
            .map(|&l| if l > 0.0 { mass / l } else { 0.0 })
            .collect();
        // x-velocity: Dirichlet nodes across x, odd reflection across y walls
        let ax = dst1_eigenvalues(nx - 1, grid.hx);
        let ay = dst2_eigenvalues(ny, grid.hy);
        let mut ux_symbol = Vec::with_capacity((nx - 1) * ny);
        for q in 0..ny {
            for p in 0..nx - 1 {
                ux_symbol.push(1.0 / (mass + eta * (2.0 * ax[p] + ay[q])));
            }
        }
        let bx = dst2_eigenvalues(nx, grid.hx);
        let by = dst1_eigenvalues(ny - 1, grid.hy);
        let mut uy_symbol = Vec::with_capacity(nx * (ny - 1));
        for q in 0..ny - 1 {
            for p in 0..nx {
                uy_symbol.push(1.0 / (mass + eta * (bx[p] + 2.0 * by[q])));
            }
        }
        Self {
            grid: *grid,
            cos,
            schur_symbol,
            eta,
            ux: Separable::new(nx - 1, ny, dst1_matrix(nx - 1), dst2_matrix(ny)),
            uy: Separable::new(nx, ny - 1, dst2_matrix(nx), dst1_matrix(ny - 1)),
            ux_symbol,
            uy_symbol,
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64], h: f64, boundary: &[bool]) {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let nf = g.num_faces();
        let (rv, rp) = r.split_at(nf);
        let (zv, zp) = z.split_at_mut(nf);
        // p = -S^-1 r_p on the mean-free part
        let mut rp0 = rp.to_vec();
        linalg::remove_mean(&mut rp0);
        self.cos.apply_diagonal(&self.schur_symbol, &rp0, zp);
        for (zi, ri) in zp.iter_mut().zip(&rp0) {
            *zi = -(*zi + 2.0 * self.eta * ri);
        }
        // v = A^-1 (r_v / h - G p)
        let mut gp = vec![0.0; nf];
        g.gradient_into(zp, &mut gp);
        let mut t: Vec<f64> = (0..nf).map(|f| rv[f] / h - gp[f]).collect();
        let mut buf = Vec::with_capacity((nx - 1) * ny);
        for jj in 0..ny {
            for i in 1..nx {
                buf.push(t[g.x_face(i, jj)]);
            }
        }
        let mut out = vec![0.0; buf.len()];
        self.ux.apply_diagonal(&self.ux_symbol, &buf, &mut out);
        let mut k = 0;
        for jj in 0..ny {
            for i in 1..nx {
                zv[g.x_face(i, jj)] = out[k];
                k += 1;
            }
        }
        buf.clear();
        for jj in 1..ny {
            for i in 0..nx {
                buf.push(t[g.y_face(i, jj)]);
            }
        }
        let mut out = vec![0.0; buf.len()];
        self.uy.apply_diagonal(&self.uy_symbol, &buf, &mut out);
        k = 0;
        for jj in 1..ny {
            for i in 0..nx {
                zv[g.y_face(i, jj)] = out[k];
                k += 1;
            }
        }
        for f in 0..nf {
            if boundary[f] {
                zv[f] = rv[f];
            }
        }
        t.clear();
    }
}

/// Solves the linearized momentum balance
/// `(rho_bar v - rho_k v_k)/h + C(w, J) v - div(2 eta_k Dv) + ∇p = -phi_s ∇mu`,
/// `div v = 0`, `v = 0` on walls, with `rho_bar` the face mean of the old and
/// new densities. The pressure is returned with zero mean.
pub fn solve_momentum(
    inp: &MomentumInput<'_>,
    grid: &Grid,
    guess: Option<&FlowState>,
    opts: MomentumOptions,
) -> Result<MomentumSolution> {
    MomentumSystem::new(inp, grid)?.solve(guess, opts)
}
