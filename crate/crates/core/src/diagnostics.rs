//! Energy functionals, dissipation and per-step acceptance checks.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::flow::{FluidParams, ViscousOperator};
use crate::grid::{CellField, FaceField, Grid};
use crate::nonlocal::NonlocalForm;
use crate::potential::PotentialParams;
use crate::stepper::{SolverSettings, StepReport};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyParts {
    /// `∫ rho |v|^2 / 2` with face-averaged density.
    pub kinetic: f64,
    /// `∫ Psi(phi)`.
    pub potential: f64,
    /// `E(phi, phi) / 2`.
    pub nonlocal: f64,
    pub free: f64,
    pub total: f64,
}

/// Kinetic, free and total energy of a state.
pub fn total_energy(
    phi: &CellField,
    v: &FaceField,
    grid: &Grid,
    form: &NonlocalForm,
    fp: &FluidParams,
    p: &PotentialParams,
) -> Result<EnergyParts> {
    check_len("phi", grid.num_cells(), phi.len())?;
    check_len("v", grid.num_faces(), v.len())?;
    check_len("nonlocal form", grid.num_cells(), form.size())?;
    if let Some(&bad) = phi.iter().find(|s| !(s.abs() <= 1.0)) {
        return Err(Error::DomainViolation {
            value: bad,
            interval: "[-1, 1]",
        });
    }
    let rho: Vec<f64> = phi.iter().map(|&s| fp.density(s)).collect();
    let kinetic = kinetic_energy(&rho, v, grid);
    let potential = grid.integral(&phi.iter().map(|&s| p.psi(s)).collect::<Vec<_>>());
    let nonlocal = 0.5 * form.bilinear(phi, phi);
    let free = potential + nonlocal;
    Ok(EnergyParts {
        kinetic,
        potential,
        nonlocal,
        free,
        total: kinetic + free,
    })
}

pub(crate) fn kinetic_energy(rho_cells: &[f64], v: &[f64], grid: &Grid) -> f64 {
    let rf = grid.cell_to_faces(rho_cells);
    0.5 * grid.cell_area() * rf.iter().zip(v).map(|(r, x)| r * x * x).sum::<f64>()
}

/// `(h/2) ‖∇phi‖²`, the regularization part of the discrete total energy.
pub fn regularization_energy(phi: &[f64], h: f64, grid: &Grid) -> f64 {
    let mut g = vec![0.0; grid.num_faces()];
    grid.gradient_into(phi, &mut g);
    0.5 * h * grid.face_dot(&g, &g)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Dissipation {
    /// `∫ 2 eta |Dv|^2`.
    pub viscous: f64,
    /// `∫ m |∇mu|^2`.
    pub mixing: f64,
    pub total: f64,
}

/// Viscous and mixing dissipation rates. `mobility` holds face values.
pub fn dissipation(
    v: &FaceField,
    mu: &CellField,
    eta_k: &CellField,
    mobility: &FaceField,
    grid: &Grid,
) -> Result<Dissipation> {
    check_len("v", grid.num_faces(), v.len())?;
    check_len("mu", grid.num_cells(), mu.len())?;
    check_len("mobility", grid.num_faces(), mobility.len())?;
    let viscous = ViscousOperator::new(grid, eta_k)?.dissipation(v);
    let mixing = mixing_dissipation(mu, mobility, grid);
    Ok(Dissipation {
        viscous,
        mixing,
        total: viscous + mixing,
    })
}

pub(crate) fn mixing_dissipation(mu: &[f64], mobility: &[f64], grid: &Grid) -> f64 {
    let mut g = vec![0.0; grid.num_faces()];
    grid.gradient_into(mu, &mut g);
    grid.cell_area() * g.iter().zip(mobility).map(|(x, m)| m * x * x).sum::<f64>()
}

/// Result of checking a step against the acceptance predicates.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CheckOutcome {
    Pass,
    Fail { check: &'static str, detail: String },
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, CheckOutcome::Pass)
    }
}

/// Energy slack, mass drift, bounds and coupled residual, in that order;
/// the first failing predicate is returned.
pub fn check_report(r: &StepReport, s: &SolverSettings) -> CheckOutcome {
    let floor = s.energy_floor(r.energy_old_h);
    if !(r.slack >= -floor) {
        return CheckOutcome::Fail {
            check: "energy",
            detail: format!("slack {:e} below -{:e}", r.slack, floor),
        };
    }
    if !(r.mass_drift.abs() <= s.tol_mass) {
        return CheckOutcome::Fail {
            check: "mass",
            detail: format!("drift {:e} exceeds {:e}", r.mass_drift, s.tol_mass),
        };
    }
    if !(r.max_abs_phi < 1.0) {
        return CheckOutcome::Fail {
            check: "bounds",
            detail: format!("max |phi| = {}", r.max_abs_phi),
        };
    }
    if !(r.coupled_residual <= s.tol_couple) {
        return CheckOutcome::Fail {
            check: "residual",
            detail: format!("coupled residual {:e} exceeds {:e}", r.coupled_residual, s.tol_couple),
        };
    }
    CheckOutcome::Pass
}
