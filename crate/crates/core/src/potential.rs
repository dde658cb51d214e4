//! Logarithmic free energy density and its convex splitting
//! `Psi = Psi0 - kappa s^2 / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{CellField, Grid};
use crate::linalg::{self, KrylovOptions};
use crate::nonlocal::NonlocalForm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialParams {
    pub theta: f64,
    pub theta_c: f64,
    /// Convexification constant; must be at least `theta_c - theta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub clamp_eps: f64,
}

fn default_clamp_eps() -> f64 {
    1e-9
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            theta: 1.0,
            theta_c: 2.0,
            kappa: None,
            clamp_eps: default_clamp_eps(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValues {
    pub psi: f64,
    pub dpsi: f64,
    pub psi0: f64,
    pub dpsi0: f64,
    pub d2psi0: f64,
}

impl PotentialParams {
    pub fn new(theta: f64, theta_c: f64) -> Result<Self> {
        let p = Self {
            theta,
            theta_c,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::param(
                "potential",
                format!("theta must be positive, got {}", self.theta),
            ));
        }
        if !(self.theta < self.theta_c && self.theta_c.is_finite()) {
            return Err(Error::param("potential", "require theta < theta_c"));
        }
        if self.kappa() < self.theta_c - self.theta {
            return Err(Error::param(
                "potential",
                format!(
                    "kappa = {} is below theta_c - theta = {}",
                    self.kappa(),
                    self.theta_c - self.theta
                ),
            ));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps <= 1e-6) {
            return Err(Error::param(
                "potential",
                format!("clamp_eps must lie in (0, 1e-6], got {}", self.clamp_eps),
            ));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(self.theta_c)
    }

    /// `Psi(s)`, including the finite limits at `s = ±1`.
    pub fn psi(&self, s: f64) -> f64 {
        0.5 * self.theta * (xlogx(1.0 + s) + xlogx(1.0 - s)) - 0.5 * self.theta_c * s * s
    }

    pub fn psi0(&self, s: f64) -> f64 {
        self.psi(s) + 0.5 * self.kappa() * s * s
    }

    pub fn dpsi(&self, s: f64) -> f64 {
        self.theta * s.atanh() - self.theta_c * s
    }

    pub fn dpsi0(&self, s: f64) -> f64 {
        self.theta * s.atanh() + (self.kappa() - self.theta_c) * s
    }

    pub fn d2psi0(&self, s: f64) -> f64 {
        self.theta / (1.0 - s * s) + self.kappa() - self.theta_c
    }

    /// Smallest value of `Psi` on `[-1, 1]`.
    pub fn psi_min(&self) -> f64 {
        // Psi' = 0 at s = ±s* with theta atanh(s*) = theta_c s*
        let mut s: f64 = 0.999;
        for _ in 0..200 {
            let f = self.theta * s.atanh() - self.theta_c * s;
            let df = self.theta / (1.0 - s * s) - self.theta_c;
            let next = (s - f / df).clamp(1e-3, 1.0 - 1e-15);
            if (next - s).abs() < 1e-16 {
                break;
            }
            s = next;
        }
        self.psi(s).min(self.psi(0.0))
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Evaluates `Psi`, `Psi'`, `Psi0`, `Psi0'`, `Psi0''` at an interior point.
pub fn psi_eval(s: f64, p: &PotentialParams) -> Result<PsiValues> {
    if !(s.abs() < 1.0) {
        return Err(Error::DomainViolation {
            value: s,
            interval: "(-1, 1)",
        });
    }
    Ok(PsiValues {
        psi: p.psi(s),
        dpsi: p.dpsi(s),
        psi0: p.psi0(s),
        dpsi0: p.dpsi0(s),
        d2psi0: p.d2psi0(s),
    })
}

/// Largest `t <= 1` keeping `u + t * d` inside `[-1 + eps, 1 - eps]`.
pub(crate) fn step_to_boundary(u: &[f64], d: &[f64], eps: f64) -> f64 {
    let hi = 1.0 - eps;
    let mut t: f64 = 1.0;
    for (&ui, &di) in u.iter().zip(d) {
        if di > 0.0 {
            t = t.min(((hi - ui) / di).max(0.0));
        } else if di < 0.0 {
            t = t.min(((-hi - ui) / di).max(0.0));
        }
    }
    t
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolventSolution {
    pub u: CellField,
    /// Euclidean norm of the mean-free residual.
    pub residual: f64,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
}

/// Solves `u + K u / |cell| - h_reg Δ_N u + P0 Psi0'(u) = f` with
/// `mean(u) = mean(f)` by safeguarded Newton.
pub fn resolvent(
    f: &CellField,
    h_reg: f64,
    grid: &Grid,
    form: &NonlocalForm,
    p: &PotentialParams,
    opts: NewtonOptions,
) -> Result<ResolventSolution> {
    let n = grid.num_cells();
    check_len("cell field", n, f.len())?;
    check_len("nonlocal form", n, form.size())?;
    if !(h_reg > 0.0) {
        return Err(Error::param(
            "resolvent",
            format!("h_reg must be positive, got {h_reg}"),
        ));
    }
    let m = grid.mean(f);
    let eps = p.clamp_eps;
    if !(m.abs() < 1.0 - eps) {
        return Err(Error::MeanCondition(format!("mean {m} of f is outside (-1, 1)")));
    }
    let lap = grid.neumann_laplacian();
    let basis = form.basis();
    let profile = form.spectral_profile();

    let residual = |u: &[f64], out: &mut [f64], tmp: &mut [f64]| {
        form.operator_into(u, out);
        lap.apply_into(u, tmp);
        for i in 0..n {
            out[i] += u[i] - h_reg * tmp[i] + p.dpsi0(u[i]) - f[i];
        }
        linalg::remove_mean(out);
    };

    let mut u = vec![m; n];
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    residual(&u, &mut r, &mut tmp);
    let mut rnorm = linalg::norm2(&r);
    let mut newton = 0;
    let mut linear = 0;
    while rnorm > opts.tol {
        if newton >= opts.max_iter {
            return Err(Error::NotConverged {
                solver: "resolvent newton",
                iterations: newton,
                residual: rnorm,
            });
        }
        let curv: Vec<f64> = u.iter().map(|&s| p.d2psi0(s)).collect();
        let cbar = grid.mean(&curv);
        let symbol: Vec<f64> = basis
            .eigenvalues()
            .iter()
            .zip(profile)
            .map(|(&l, &d)| {
                if l <= 0.0 {
                    0.0
                } else {
                    1.0 / (1.0 + cbar + h_reg * l + d)
                }
            })
            .collect();
        let mut ltmp = vec![0.0; n];
        let mut apply = |x: &[f64], out: &mut [f64]| {
            form.operator_into(x, out);
            lap.apply_into(x, &mut ltmp);
            for i in 0..n {
                out[i] += (1.0 + curv[i]) * x[i] - h_reg * ltmp[i];
            }
            linalg::remove_mean(out);
        };
        let mut precond = |x: &[f64], z: &mut [f64]| basis.apply_diagonal(&symbol, x, z);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; n];
        let stats = linalg::pcg(
            &mut apply,
            &mut precond,
            &rhs,
            &mut delta,
            KrylovOptions {
                abs_tol: (1e-3 * rnorm).max(0.1 * opts.tol),
                max_iter: 1000,
                restart: 0,
            },
        )?;
        linear += stats.iterations;
        linalg::remove_mean(&mut delta);

        let mut t = step_to_boundary(&u, &delta, eps);
        let mut trial = vec![0.0; n];
        let mut rt = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = u[i] + t * delta[i];
            }
            residual(&trial, &mut rt, &mut tmp);
            let tn = linalg::norm2(&rt);
            if tn < rnorm {
                accepted = true;
                u.copy_from_slice(&trial);
                r.copy_from_slice(&rt);
                rnorm = tn;
                break;
            }
            t *= 0.5;
        }
        newton += 1;
        if !accepted {
            return Err(Error::NotConverged {
                solver: "resolvent line search",
                iterations: newton,
                residual: rnorm,
            });
        }
    }
    Ok(ResolventSolution {
        u: CellField::wrap(u),
        residual: rnorm,
        newton_iterations: newton,
        linear_iterations: linear,
    })
}

/// Norms entering the bound on the singular part of the chemical potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChempotDiagnostic {
    pub psi0_prime_l2: f64,
    pub mu_integral_abs: f64,
    pub grad_mu_l2: f64,
    pub grad_phi_l2: f64,
    /// `(|Psi0'(phi)| + |∫mu|) / (|∇mu| + |∇phi|^2 + 1)`.
    pub ratio: f64,
}

pub fn chempot_diagnostic(
    phi: &CellField,
    phi_k: &CellField,
    mu: &CellField,
    grid: &Grid,
    p: &PotentialParams,
) -> Result<ChempotDiagnostic> {
    let n = grid.num_cells();
    check_len("phi", n, phi.len())?;
    check_len("phi_k", n, phi_k.len())?;
    check_len("mu", n, mu.len())?;
    let (m, mk) = (grid.mean(phi), grid.mean(phi_k));
    if (m - mk).abs() > 1e-10 || !(m.abs() < 1.0) {
        return Err(Error::MeanCondition(format!(
            "means {m} and {mk} must agree and lie in (-1, 1)"
        )));
    }
    if let Some(&bad) = phi.iter().find(|s| !(s.abs() < 1.0)) {
        return Err(Error::DomainViolation {
            value: bad,
            interval: "(-1, 1)",
        });
    }
    let d0: Vec<f64> = phi.iter().map(|&s| p.dpsi0(s)).collect();
    let mut g = vec![0.0; grid.num_faces()];
    grid.gradient_into(mu, &mut g);
    let grad_mu_l2 = grid.face_dot(&g, &g).sqrt();
    grid.gradient_into(phi, &mut g);
    let grad_phi_l2 = grid.face_dot(&g, &g).sqrt();
    let psi0_prime_l2 = grid.cell_norm(&d0);
    let mu_integral_abs = grid.integral(mu).abs();
    Ok(ChempotDiagnostic {
        psi0_prime_l2,
        mu_integral_abs,
        grad_mu_l2,
        grad_phi_l2,
        ratio: (psi0_prime_l2 + mu_integral_abs) / (grad_mu_l2 + grad_phi_l2 * grad_phi_l2 + 1.0),
    })
}
