//! The coupled implicit time step: a Picard loop over velocity and phase,
//! with a safeguarded Newton solve for the phase field and a saddle-point
//! solve for the velocity, followed by the discrete energy bookkeeping.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, check_report, CheckOutcome, EnergyParts};
use crate::error::{check_len, Error, Result};
use crate::flow::{self, FlowState, FluidParams, MomentumInput, MomentumOptions, MomentumSystem};
use crate::grid::{CellField, FaceField, Grid};
use crate::linalg::{self, KrylovOptions};
use crate::nonlocal::NonlocalForm;
use crate::potential::{self, PotentialParams};
use crate::smoothing::Smoother;

/// Tolerances and iteration limits of the step solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// RMS of the stacked coupled residual.
    pub tol_couple: f64,
    /// RMS of `h` times the momentum residual.
    pub tol_mom: f64,
    /// Largest cell divergence of an accepted velocity.
    pub tol_div: f64,
    /// RMS of the phase-equation residual.
    pub tol_newton: f64,
    /// Relative energy tolerance: slack must exceed `-tol_energy |E_old| - 1e-14`.
    pub tol_energy: f64,
    /// Largest per-step change of the mean of phi.
    pub tol_mass: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub max_krylov: usize,
    /// Under-relaxation used once the coupled residual grows.
    pub fallback_relaxation: f64,
    /// Times a failing step may be retried with half the step size. Set from
    /// the time section of a run configuration.
    #[serde(skip)]
    pub max_halvings: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_couple: 1e-9,
            tol_mom: 1e-9,
            tol_div: 1e-8,
            tol_newton: 1e-10,
            tol_energy: 1e-8,
            tol_mass: 1e-12,
            max_outer: 50,
            max_newton: 50,
            max_krylov: 2000,
            fallback_relaxation: 0.5,
            max_halvings: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tol_couple", self.tol_couple),
            ("tol_mom", self.tol_mom),
            ("tol_div", self.tol_div),
            ("tol_newton", self.tol_newton),
            ("tol_energy", self.tol_energy),
            ("tol_mass", self.tol_mass),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param("solver", format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_newton == 0 || self.max_krylov == 0 {
            return Err(Error::param("solver", "iteration limits must be positive"));
        }
        if !(self.fallback_relaxation > 0.0 && self.fallback_relaxation <= 1.0) {
            return Err(Error::param("solver", "fallback_relaxation must lie in (0, 1]"));
        }
        if self.max_halvings > 3 {
            return Err(Error::param("solver", "max_halvings must not exceed 3"));
        }
        Ok(())
    }

    /// Allowed negative energy slack for a step starting from energy `e_old`.
    pub fn energy_floor(&self, e_old: f64) -> f64 {
        self.tol_energy * e_old.abs() + 1e-14
    }

    fn momentum(&self) -> MomentumOptions {
        MomentumOptions {
            tol_mom: self.tol_mom,
            tol_div: self.tol_div,
            max_iter: self.max_krylov,
            ..MomentumOptions::default()
        }
    }
}

/// Everything that stays fixed over a run.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Grid,
    pub form: Arc<NonlocalForm>,
    pub potential: PotentialParams,
    pub fluid: FluidParams,
    pub settings: SolverSettings,
    /// Implicit substeps used by the smoothing operator.
    pub smoothing_substeps: usize,
}

impl Model {
    pub fn new(
        form: Arc<NonlocalForm>,
        potential: PotentialParams,
        fluid: FluidParams,
        settings: SolverSettings,
    ) -> Result<Self> {
        potential.validate()?;
        fluid.validate()?;
        settings.validate()?;
        Ok(Self {
            grid: *form.grid(),
            form,
            potential,
            fluid,
            settings,
            smoothing_substeps: 1,
        })
    }

    pub fn smoother(&self, h: f64) -> Result<Smoother> {
        Smoother::with_basis(self.form.basis().clone(), h, self.smoothing_substeps)
    }

    /// `K phi / |cell| + Psi0'(phi) - h Δ phi - kappa (phi + phi_k) / 2`.
    pub(crate) fn chemical_potential(&self, phi: &[f64], phi_k: &[f64], h: f64) -> Vec<f64> {
        let n = phi.len();
        let mut mu = vec![0.0; n];
        let mut lap = vec![0.0; n];
        self.form.operator_into(phi, &mut mu);
        self.grid.neumann_laplacian().apply_into(phi, &mut lap);
        let kappa = self.potential.kappa();
        for i in 0..n {
            mu[i] += self.potential.dpsi0(phi[i]) - h * lap[i] - 0.5 * kappa * (phi[i] + phi_k[i]);
        }
        mu
    }

    /// Discrete total energy including the `(h/2) ‖∇phi‖²` term.
    pub fn energy(&self, phi: &CellField, v: &FaceField, h: f64) -> Result<(EnergyParts, f64)> {
        let e = diagnostics::total_energy(phi, v, &self.grid, &self.form, &self.fluid, &self.potential)?;
        let reg = diagnostics::regularization_energy(phi, h, &self.grid);
        Ok((e, e.total + reg))
    }
}

/// Fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub phi: CellField,
    pub mu: CellField,
    pub flow: FlowState,
    pub rho: CellField,
    /// Smoothed phase field `P_h phi`.
    pub phi_s: CellField,
    pub t: f64,
    pub step: usize,
}

impl SimState {
    /// Builds the initial state from `phi0` (which is smoothed once) and `v0`.
    pub fn initial(model: &Model, phi0: &CellField, v0: FaceField, h: f64) -> Result<Self> {
        let grid = &model.grid;
        check_len("phi0", grid.num_cells(), phi0.len())?;
        check_len("v0", grid.num_faces(), v0.len())?;
        if let Some(&bad) = phi0.iter().find(|s| !(s.abs() <= 1.0)) {
            return Err(Error::DomainViolation {
                value: bad,
                interval: "[-1, 1]",
            });
        }
        let m = grid.mean(phi0);
        if !(m.abs() < 1.0) {
            return Err(Error::MeanCondition(format!("initial mean {m} outside (-1, 1)")));
        }
        if v0
            .iter()
            .enumerate()
            .any(|(f, &x)| x != 0.0 && grid.is_boundary_face(f))
        {
            return Err(Error::IncompatibleVelocity(
                "initial velocity is nonzero on a wall".into(),
            ));
        }
        let smoother = model.smoother(h)?;
        let phi = smoother.apply(phi0)?;
        let eps = model.potential.clamp_eps;
        if let Some(&bad) = phi.iter().find(|s| !(s.abs() <= 1.0 - eps)) {
            return Err(Error::DomainViolation {
                value: bad,
                interval: "(-1, 1)",
            });
        }
        Self::from_phase(
            model,
            phi,
            FlowState {
                v: v0,
                p: CellField::zeros(grid),
            },
            h,
            0.0,
            0,
        )
    }

    fn from_phase(model: &Model, phi: CellField, flow: FlowState, h: f64, t: f64, step: usize) -> Result<Self> {
        let mu = CellField::wrap(model.chemical_potential(&phi, &phi, h));
        let rho = flow::density_of(&phi, &model.fluid)?;
        let phi_s = model.smoother(h)?.apply(&phi)?;
        Ok(Self {
            phi,
            mu,
            flow,
            rho,
            phi_s,
            t,
            step,
        })
    }

    pub fn mass(&self) -> f64 {
        self.phi.iter().sum::<f64>() / self.phi.len() as f64
    }
}

/// Per-step record of solver effort, energies and invariants.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    pub h: f64,
    /// Number of sub-steps the step was split into by the step-size fallback.
    pub substeps: usize,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub phase_krylov_iterations: usize,
    pub momentum_krylov_iterations: usize,
    pub coupled_residual: f64,
    pub momentum_residual: f64,
    pub max_divergence: f64,
    pub relaxation: f64,
    pub energy: EnergyParts,
    /// `(h/2) ‖∇phi‖²` at the new state.
    pub regularization: f64,
    /// Discrete total energy at the new and the old state.
    pub energy_h: f64,
    pub energy_old_h: f64,
    /// `∫ 2 eta_k |Dv|²` and `∫ m |∇mu|²` at the new state.
    pub viscous_dissipation: f64,
    pub mixing_dissipation: f64,
    /// Numerical dissipation from the implicit time discretization.
    pub kinetic_increment: f64,
    pub gradient_increment: f64,
    pub nonlocal_increment: f64,
    pub slack: f64,
    pub mass: f64,
    pub mass_drift: f64,
    pub max_abs_phi: f64,
    /// Largest mass-flux magnitude over all outer iterates.
    pub max_flux: f64,
    pub chempot_ratio: f64,
}

/// Inputs of the phase-field subproblem.
#[derive(Debug, Clone, Copy)]
pub struct PhaseInput<'a> {
    pub phi_k: &'a [f64],
    pub phi_s: &'a [f64],
    pub v: &'a [f64],
    /// Face mobility `m(P_h phi_k)`.
    pub mobility: &'a [f64],
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseSolution {
    pub phi: CellField,
    pub mu: CellField,
    /// RMS of the transport-diffusion residual.
    pub residual: f64,
    pub newton_iterations: usize,
    pub krylov_iterations: usize,
}

/// `phi - phi_k + h div(phi_s v) - h div(m ∇mu)`.
fn phase_residual(model: &Model, inp: &PhaseInput<'_>, phi: &[f64], mu: &[f64]) -> Vec<f64> {
    let grid = &model.grid;
    let nf = grid.num_faces();
    let ps = grid.cell_to_faces(inp.phi_s);
    let mut g = vec![0.0; nf];
    grid.gradient_into(mu, &mut g);
    for f in 0..nf {
        g[f] = ps[f] * inp.v[f] - inp.mobility[f] * g[f];
    }
    let mut r = vec![0.0; phi.len()];
    grid.divergence_into(&g, &mut r);
    for i in 0..phi.len() {
        r[i] = phi[i] - inp.phi_k[i] + inp.h * r[i];
    }
    r
}

/// Solves the transport-diffusion equation for phi, with mu given by the
/// chemical-potential relation, by Newton's method started at `guess`.
/// Updates have zero mean and are shortened to keep `|phi| <= 1 - eps`.
pub fn phase_subsolve(model: &Model, inp: &PhaseInput<'_>, guess: Option<&[f64]>) -> Result<PhaseSolution> {
    let grid = model.grid;
    let n = grid.num_cells();
    let nf = grid.num_faces();
    check_len("phi_k", n, inp.phi_k.len())?;
    check_len("phi_s", n, inp.phi_s.len())?;
    check_len("v", nf, inp.v.len())?;
    check_len("mobility", nf, inp.mobility.len())?;
    if !(inp.h > 0.0) {
        return Err(Error::param("time", format!("h must be positive, got {}", inp.h)));
    }
    if inp
        .v
        .iter()
        .enumerate()
        .any(|(f, &x)| x != 0.0 && grid.is_boundary_face(f))
    {
        return Err(Error::IncompatibleVelocity("velocity is nonzero on a wall".into()));
    }
    let mut div = vec![0.0; n];
    grid.divergence_into(inp.v, &mut div);
    let div_max = linalg::norm_inf(&div);
    if div_max > 100.0 * model.settings.tol_div {
        return Err(Error::IncompatibleVelocity(format!("velocity divergence {div_max:e}")));
    }
    let s = &model.settings;
    let p = &model.potential;
    let h = inp.h;
    let eps = p.clamp_eps;
    let kappa = p.kappa();
    let basis = model.form.basis();
    let profile = model.form.spectral_profile();
    let lap = grid.neumann_laplacian();
    let m_bar = grid.mean(inp.mobility);
    let sqrt_n = (n as f64).sqrt();

    let mut phi: Vec<f64> = match guess {
        Some(g) => {
            check_len("guess", n, g.len())?;
            g.to_vec()
        }
        None => inp.phi_k.to_vec(),
    };
    let mut mu = model.chemical_potential(&phi, inp.phi_k, h);
    let mut r = phase_residual(model, inp, &phi, &mu);
    let mut rnorm = linalg::norm2(&r);
    let mut newton = 0;
    let mut krylov = 0;
    while rnorm > s.tol_newton * sqrt_n {
        if newton >= s.max_newton {
            return Err(Error::NotConverged {
                solver: "phase newton",
                iterations: newton,
                residual: rnorm / sqrt_n,
            });
        }
        let curv: Vec<f64> = phi.iter().map(|&x| p.d2psi0(x) - 0.5 * kappa).collect();
        let cbar = grid.mean(&curv);
        let symbol: Vec<f64> = basis
            .eigenvalues()
            .iter()
            .zip(profile)
            .map(|(&l, &d)| 1.0 / (1.0 + h * m_bar * l * (d + cbar + h * l).max(0.0)))
            .collect();
        let mut t_cell = vec![0.0; n];
        let mut t_face = vec![0.0; nf];
        let mut apply = |x: &[f64], out: &mut [f64]| {
            // J x = x - h div(m ∇(K x / a + c x - h Δ x))
            model.form.operator_into(x, &mut t_cell);
            lap.apply_into(x, out);
            for i in 0..n {
                t_cell[i] += curv[i] * x[i] - h * out[i];
            }
            grid.gradient_into(&t_cell, &mut t_face);
            for f in 0..nf {
                t_face[f] *= inp.mobility[f];
            }
            grid.divergence_into(&t_face, out);
            for i in 0..n {
                out[i] = x[i] - h * out[i];
            }
        };
        let mut precond = |x: &[f64], z: &mut [f64]| basis.apply_diagonal(&symbol, x, z);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; n];
        let stats = linalg::gmres(
            &mut apply,
            &mut precond,
            &rhs,
            &mut delta,
            KrylovOptions {
                abs_tol: (1e-4 * rnorm).max(0.1 * s.tol_newton * sqrt_n),
                max_iter: s.max_krylov,
                restart: 60,
            },
        )?;
        krylov += stats.iterations;
        linalg::remove_mean(&mut delta);

        let mut t = potential::step_to_boundary(&phi, &delta, eps);
        let mut trial = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = phi[i] + t * delta[i];
            }
            let mu_t = model.chemical_potential(&trial, inp.phi_k, h);
            let r_t = phase_residual(model, inp, &trial, &mu_t);
            let tn = linalg::norm2(&r_t);
            if tn < rnorm {
                phi.copy_from_slice(&trial);
                mu = mu_t;
                r = r_t;
                rnorm = tn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        newton += 1;
        if !accepted {
            return Err(Error::NotConverged {
                solver: "phase line search",
                iterations: newton,
                residual: rnorm / sqrt_n,
            });
        }
    }
    Ok(PhaseSolution {
        phi: CellField::wrap(phi),
        mu: CellField::wrap(mu),
        residual: rnorm / sqrt_n,
        newton_iterations: newton,
        krylov_iterations: krylov,
    })
}

/// Advances `state` by one step of size `h`. With step-size fallback enabled
/// the interval may be covered by 2, 4 or 8 equal sub-steps instead.
pub fn step(model: &Model, state: &SimState, h: f64) -> Result<(SimState, StepReport)> {
    let mut last_err = None;
    for halvings in 0..=model.settings.max_halvings {
        let parts = 1usize << halvings;
        let hs = h / parts as f64;
        let mut current = state.clone();
        let mut reports = Vec::with_capacity(parts);
        let mut ok = true;
        for _ in 0..parts {
            match single_step(model, &current, hs) {
                Ok((next, rep)) => {
                    current = next;
                    reports.push(rep);
                }
                Err(e) => {
                    last_err = Some(e);
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            let mut rep = merge_reports(reports, state);
            rep.substeps = parts;
            current.step = state.step + 1;
            rep.step = current.step;
            return Ok((current, rep));
        }
    }
    Err(Error::Step {
        step: state.step + 1,
        source: Box::new(last_err.expect("at least one attempt")),
    })
}

fn merge_reports(mut reports: Vec<StepReport>, start: &SimState) -> StepReport {
    if reports.len() == 1 {
        return reports.pop().unwrap();
    }
    let first_energy = reports[0].energy_old_h;
    let mut out = reports.last().unwrap().clone();
    let sum = |f: fn(&StepReport) -> f64| reports.iter().map(f).sum::<f64>();
    let max = |f: fn(&StepReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
    out.outer_iterations = reports.iter().map(|r| r.outer_iterations).sum();
    out.newton_iterations = reports.iter().map(|r| r.newton_iterations).sum();
    out.phase_krylov_iterations = reports.iter().map(|r| r.phase_krylov_iterations).sum();
    out.momentum_krylov_iterations = reports.iter().map(|r| r.momentum_krylov_iterations).sum();
    out.kinetic_increment = sum(|r| r.kinetic_increment);
    out.gradient_increment = sum(|r| r.gradient_increment);
    out.nonlocal_increment = sum(|r| r.nonlocal_increment);
    out.slack = sum(|r| r.slack);
    out.coupled_residual = max(|r| r.coupled_residual);
    out.max_flux = max(|r| r.max_flux);
    out.max_abs_phi = max(|r| r.max_abs_phi);
    out.energy_old_h = first_energy;
    out.mass_drift = out.mass - start.mass();
    out.h = reports.iter().map(|r| r.h).sum();
    out
}

fn single_step(model: &Model, state: &SimState, h: f64) -> Result<(SimState, StepReport)> {
    let grid = model.grid;
    let s = &model.settings;
    let fp = &model.fluid;
    let nc = grid.num_cells();
    let nf = grid.num_faces();
    let phi_k = &state.phi;
    let v_k = &state.flow.v;

    let smoother = model.smoother(h)?;
    let phi_s = smoother.apply(phi_k)?;
    let rho_k = flow::density_of(phi_k, fp)?;
    let rho_s = flow::density_of(&phi_s, fp)?;
    let eta_k = flow::viscosity_of(phi_k, fp);
    let mobility = flow::face_mobility(&phi_s, fp, &grid);
    let factor = fp.flux_factor();

    let mut v_iter: Vec<f64> = v_k.to_vec();
    let mut phi_iter: Vec<f64> = phi_k.to_vec();
    let mut flow_guess = state.flow.clone();
    let mut relaxation = 1.0;
    let mut prev_res = f64::INFINITY;
    let mut rep = StepReport {
        h,
        substeps: 1,
        ..StepReport::default()
    };

    for outer in 1..=s.max_outer {
        let phase = phase_subsolve(
            model,
            &PhaseInput {
                phi_k,
                phi_s: &phi_s,
                v: &v_iter,
                mobility: &mobility,
                h,
            },
            Some(&phi_iter),
        )?;
        rep.newton_iterations += phase.newton_iterations;
        rep.phase_krylov_iterations += phase.krylov_iterations;
        let flux = flow::flux_from_mobility(&phase.mu, &mobility, factor, &grid);
        rep.max_flux = rep.max_flux.max(linalg::norm_inf(&flux));
        let rho_new = flow::density_of(&phase.phi, fp)?;
        let mom_input = MomentumInput {
            v_k,
            rho_k: &rho_k,
            rho_new: &rho_new,
            rho_s: &rho_s,
            eta_k: &eta_k,
            flux: &flux,
            phi_s: &phi_s,
            mu: &phase.mu,
            w: &v_iter,
            h,
        };
        let sol = MomentumSystem::new(&mom_input, &grid)?.solve(Some(&flow_guess), s.momentum())?;
        rep.momentum_krylov_iterations += sol.iterations;
        let mut v_new = sol.flow.v.to_vec();
        let mut p_new = sol.flow.p.to_vec();
        if relaxation < 1.0 {
            for f in 0..nf {
                v_new[f] = v_iter[f] + relaxation * (v_new[f] - v_iter[f]);
            }
            for c in 0..nc {
                p_new[c] = flow_guess.p[c] + relaxation * (p_new[c] - flow_guess.p[c]);
            }
        }

        // full nonlinear residual at (phi, mu, v_new, p_new)
        let r1 = phase_residual(
            model,
            &PhaseInput {
                phi_k,
                phi_s: &phi_s,
                v: &v_new,
                mobility: &mobility,
                h,
            },
            &phase.phi,
            &phase.mu,
        );
        let mu_check = model.chemical_potential(&phase.phi, phi_k, h);
        let r2: Vec<f64> = (0..nc).map(|i| phase.mu[i] - mu_check[i]).collect();
        let consistent = MomentumSystem::new(&MomentumInput { w: &v_new, ..mom_input }, &grid)?;
        let r3 = consistent.momentum_residual(&v_new, &p_new);
        let mut r4 = vec![0.0; nc];
        grid.divergence_into(&v_new, &mut r4);
        let interior = (0..nf).filter(|&f| !grid.is_boundary_face(f)).count();
        let sq = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let total = sq(&r1) + sq(&r2) + h * h * sq(&r3) + sq(&r4);
        let res = (total / (3 * nc + interior) as f64).sqrt();

        phi_iter = phase.phi.to_vec();
        v_iter = v_new;
        flow_guess = FlowState {
            v: FaceField::wrap(v_iter.clone()),
            p: CellField::wrap(p_new),
        };
        rep.outer_iterations = outer;
        rep.coupled_residual = res;
        rep.momentum_residual = h * (sq(&r3) / interior.max(1) as f64).sqrt();
        rep.max_divergence = linalg::norm_inf(&r4);
        if res <= s.tol_couple {
            rep.relaxation = relaxation;
            return finish_step(model, state, h, phase.phi, phase.mu, flow_guess, phi_s, rep);
        }
        if res > prev_res && relaxation == 1.0 {
            relaxation = s.fallback_relaxation;
        }
        prev_res = res;
    }
    Err(Error::NotConverged {
        solver: "picard",
        iterations: s.max_outer,
        residual: rep.coupled_residual,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_step(
    model: &Model,
    state: &SimState,
    h: f64,
    phi: CellField,
    mu: CellField,
    flow_new: FlowState,
    phi_s: CellField,
    mut rep: StepReport,
) -> Result<(SimState, StepReport)> {
    let grid = model.grid;
    let fp = &model.fluid;
    let phi_k = &state.phi;
    let v_k = &state.flow.v;
    let v = &flow_new.v;
    let (_, e_old_h) = model.energy(phi_k, v_k, h)?;
    let (e_new, e_new_h) = model.energy(&phi, v, h)?;

    let rho_k = flow::density_of(phi_k, fp)?;
    let dv: Vec<f64> = (0..v.len()).map(|f| v[f] - v_k[f]).collect();
    let delta: Vec<f64> = (0..phi.len()).map(|i| phi[i] - phi_k[i]).collect();
    let eta_k = CellField::wrap(flow::viscosity_of(phi_k, fp));
    let mobility = FaceField::wrap(flow::face_mobility(&phi_s, fp, &grid));
    let diss = diagnostics::dissipation(v, &mu, &eta_k, &mobility, &grid)?;

    rep.kinetic_increment = diagnostics::kinetic_energy(&rho_k, &dv, &grid);
    rep.gradient_increment = diagnostics::regularization_energy(&delta, h, &grid);
    rep.nonlocal_increment = 0.5 * model.form.bilinear(&delta, &delta);
    rep.viscous_dissipation = diss.viscous;
    rep.mixing_dissipation = diss.mixing;
    rep.energy = e_new;
    rep.regularization = e_new_h - e_new.total;
    rep.energy_h = e_new_h;
    rep.energy_old_h = e_old_h;
    rep.slack = e_old_h
        - (e_new_h
            + rep.kinetic_increment
            + rep.gradient_increment
            + rep.nonlocal_increment
            + h * (diss.viscous + diss.mixing));

    let next = SimState {
        rho: flow::density_of(&phi, fp)?,
        phi_s: model.smoother(h)?.apply(&phi)?,
        phi,
        mu,
        flow: flow_new,
        t: state.t + h,
        step: state.step + 1,
    };
    rep.step = next.step;
    rep.t = next.t;
    rep.mass = next.mass();
    rep.mass_drift = rep.mass - state.mass();
    rep.max_abs_phi = next.phi.max_abs();
    rep.chempot_ratio = potential::chempot_diagnostic(&next.phi, phi_k, &next.mu, &grid, &model.potential)
        .map(|d| d.ratio)
        .unwrap_or(f64::NAN);
    Ok((next, rep))
}

/// Result of [`run`]: the initial state, one report per completed step and
/// the states kept at the snapshot cadence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial_report: StepReport,
    pub reports: Vec<StepReport>,
    pub snapshots: Vec<SimState>,
    pub final_state: SimState,
    /// First failed acceptance check, at which the run stopped.
    pub violation: Option<(usize, CheckOutcome)>,
}

/// Report describing the initial state, with zero dissipation and slack.
pub fn initial_report(model: &Model, state: &SimState, h: f64) -> Result<StepReport> {
    let (e, eh) = model.energy(&state.phi, &state.flow.v, h)?;
    Ok(StepReport {
        step: state.step,
        t: state.t,
        h,
        substeps: 0,
        relaxation: 1.0,
        energy: e,
        regularization: eh - e.total,
        energy_h: eh,
        energy_old_h: eh,
        mass: state.mass(),
        max_abs_phi: state.phi.max_abs(),
        ..StepReport::default()
    })
}

/// Advances `n_steps` steps of size `h` from `initial`, keeping every
/// `cadence`-th state (0 keeps only the first and last). Stops at the first
/// step that fails [`check_report`].
pub fn run(model: &Model, initial: SimState, h: f64, n_steps: usize, cadence: usize) -> Result<Trajectory> {
    run_with(model, initial, h, n_steps, cadence, |_, _| {})
}

/// As [`run`], calling `observe` after every accepted step.
pub fn run_with(
    model: &Model,
    initial: SimState,
    h: f64,
    n_steps: usize,
    cadence: usize,
    observe: impl FnMut(&SimState, &StepReport),
) -> Result<Trajectory> {
    match run_partial(model, initial, h, n_steps, cadence, observe)? {
        (traj, None) => Ok(traj),
        (_, Some(e)) => Err(e),
    }
}

/// As [`run_with`], but a failing step ends the run and is returned next to
/// the trajectory up to the last accepted state instead of discarding it.
pub fn run_partial(
    model: &Model,
    initial: SimState,
    h: f64,
    n_steps: usize,
    cadence: usize,
    mut observe: impl FnMut(&SimState, &StepReport),
) -> Result<(Trajectory, Option<Error>)> {
    let initial_report = initial_report(model, &initial, h)?;
    let mut snapshots = vec![initial.clone()];
    let mut reports = Vec::with_capacity(n_steps);
    let mut state = initial;
    let mut violation = None;
    let mut failure = None;
    for _ in 0..n_steps {
        let (next, rep) = match step(model, &state, h) {
            Ok(x) => x,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        observe(&next, &rep);
        let outcome = check_report(&rep, &model.settings);
        let stop = !outcome.passed();
        if stop {
            violation = Some((rep.step, outcome));
        }
        if cadence > 0 && next.step % cadence == 0 {
            snapshots.push(next.clone());
        }
        reports.push(rep);
        state = next;
        if stop {
            break;
        }
    }
    if snapshots.last().map(|s| s.step) != Some(state.step) {
        snapshots.push(state.clone());
    }
    let traj = Trajectory {
        initial_report,
        reports,
        snapshots,
        final_state: state,
        violation,
    };
    Ok((traj, failure))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::nonlocal::QuadratureOptions;
    use std::f64::consts::PI;

    fn model(n: usize, rho: (f64, f64)) -> Model {
        let g = Grid::new(n, n, 1.0, 1.0).unwrap();
        let form =
            NonlocalForm::assemble(&g, &KernelSpec::fractional(1.5).unwrap(), QuadratureOptions::default()).unwrap();
        Model::new(
            Arc::new(form),
            PotentialParams::new(1.0, 2.0).unwrap(),
            FluidParams {
                rho1: rho.0,
                rho2: rho.1,
                ..FluidParams::default()
            },
            SolverSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn phase_subsolve_constant_state() {
        let m = model(8, (1.0, 1.0));
        let g = m.grid;
        let phi_k = vec![0.3; g.num_cells()];
        let v = vec![0.0; g.num_faces()];
        let mob = vec![1.0; g.num_faces()];
        let sol = phase_subsolve(
            &m,
            &PhaseInput {
                phi_k: &phi_k,
                phi_s: &phi_k,
                v: &v,
                mobility: &mob,
                h: 1e-3,
            },
            None,
        )
        .unwrap();
        assert!(sol.phi.iter().all(|&x| x == 0.3));
        let expected = m.potential.dpsi(0.3);
        assert!(sol.mu.iter().all(|&x| (x - expected).abs() < 1e-14));
    }

    #[test]
    fn phase_subsolve_decays_perturbation_and_keeps_mass() {
        let m = model(16, (1.0, 1.0));
        let g = m.grid;
        let phi_k = CellField::from_fn(&g, |x| 0.1 + 1e-3 * (PI * x[0]).cos());
        let v = vec![0.0; g.num_faces()];
        let mob = vec![1.0; g.num_faces()];
        let h = 1e-3;
        let phi_s = m.smoother(h).unwrap().apply(&phi_k).unwrap();
        let sol = phase_subsolve(
            &m,
            &PhaseInput {
                phi_k: &phi_k,
                phi_s: &phi_s,
                v: &v,
                mobility: &mob,
                h,
            },
            None,
        )
        .unwrap();
        assert!(sol.residual <= 1e-10);
        assert!((g.mean(&sol.phi) - g.mean(&phi_k)).abs() < 1e-14);
        let dev = |u: &[f64]| u.iter().map(|x| (x - 0.1).abs()).fold(0.0, f64::max);
        assert!(dev(&sol.phi) < dev(&phi_k));
    }

    #[test]
    fn phase_subsolve_rejects_wall_velocity() {
        let m = model(4, (1.0, 1.0));
        let g = m.grid;
        let phi_k = vec![0.0; g.num_cells()];
        let mut v = vec![0.0; g.num_faces()];
        v[g.x_face(0, 0)] = 1.0;
        let mob = vec![1.0; g.num_faces()];
        let r = phase_subsolve(
            &m,
            &PhaseInput {
                phi_k: &phi_k,
                phi_s: &phi_k,
                v: &v,
                mobility: &mob,
                h: 1e-3,
            },
            None,
        );
        assert!(matches!(r, Err(Error::IncompatibleVelocity(_))));
    }

    #[test]
    fn stationary_state_is_reproduced() {
        let m = model(8, (1.0, 3.0));
        let g = m.grid;
        let h = 1e-3;
        let s0 = SimState::initial(&m, &CellField::constant(&g, -0.2), FaceField::zeros(&g), h).unwrap();
        let traj = run(&m, s0.clone(), h, 5, 1).unwrap();
        assert!(traj.violation.is_none());
        for r in &traj.reports {
            assert!(r.slack.abs() <= 1e-10);
            assert!(r.coupled_residual <= 1e-9);
        }
        let last = &traj.final_state;
        assert!(last.flow.v.max_abs() == 0.0);
        for i in 0..g.num_cells() {
            assert!((last.phi[i] - s0.phi[i]).abs() < 1e-14);
        }
        assert_eq!(traj.snapshots.len(), 6);
    }

    #[test]
    fn energy_decreases_with_nonmatched_densities() {
        let m = model(16, (1.0, 3.0));
        let g = m.grid;
        let h = 1e-3;
        let phi0 = CellField::from_fn(&g, |x| 0.2 + 0.5 * (2.0 * PI * x[0]).cos() * (2.0 * PI * x[1]).cos());
        let s0 = SimState::initial(&m, &phi0, FaceField::zeros(&g), h).unwrap();
        let traj = run(&m, s0, h, 4, 0).unwrap();
        assert!(traj.violation.is_none(), "{:?}", traj.violation);
        let mut last = traj.initial_report.energy_h;
        for r in &traj.reports {
            assert!(r.slack >= -1e-8 * r.energy_old_h.abs());
            assert!(r.energy_h <= last + 1e-8 * last.abs());
            assert!(r.mass_drift.abs() <= 1e-12);
            assert!(r.max_flux > 0.0);
            last = r.energy_h;
        }
        assert!(traj.final_state.flow.v.max_abs() > 0.0);
    }

    #[test]
    fn matched_densities_have_zero_flux() {
        let m = model(12, (2.0, 2.0));
        let g = m.grid;
        let h = 1e-3;
        let phi0 = CellField::from_fn(&g, |x| 0.5 * (PI * x[0]).cos());
        let s0 = SimState::initial(&m, &phi0, FaceField::zeros(&g), h).unwrap();
        let traj = run(&m, s0, h, 2, 0).unwrap();
        for r in &traj.reports {
            assert_eq!(r.max_flux, 0.0);
        }
    }

    #[test]
    fn failures_carry_the_step_index() {
        let mut m = model(8, (1.0, 3.0));
        m.settings.max_outer = 1;
        m.settings.tol_couple = 1e-300;
        m.settings.max_halvings = 1;
        let g = m.grid;
        let h = 1e-3;
        let phi0 = CellField::from_fn(&g, |x| 0.3 * (PI * x[0]).cos());
        let s0 = SimState::initial(&m, &phi0, FaceField::zeros(&g), h).unwrap();
        match step(&m, &s0, h) {
            Err(Error::Step { step, source }) => {
                assert_eq!(step, 1);
                assert!(matches!(*source, Error::NotConverged { solver: "picard", .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn halved_substeps_cover_the_interval() {
        let m = model(8, (1.0, 3.0));
        let g = m.grid;
        let h = 2e-3;
        let phi0 = CellField::from_fn(&g, |x| 0.3 * (PI * x[0]).cos());
        let s0 = SimState::initial(&m, &phi0, FaceField::zeros(&g), h).unwrap();
        let (a, ra) = single_step(&m, &s0, h / 2.0).unwrap();
        let (b, rb) = single_step(&m, &a, h / 2.0).unwrap();
        let merged = merge_reports(vec![ra.clone(), rb.clone()], &s0);
        assert_eq!(merged.h, h);
        assert_eq!(merged.energy_old_h, ra.energy_old_h);
        assert_eq!(merged.energy_h, rb.energy_h);
        assert_eq!(merged.slack, ra.slack + rb.slack);
        assert!((merged.t - b.t).abs() < 1e-18);
        assert_eq!(merged.mass_drift, b.mass() - s0.mass());
    }

    #[test]
    fn report_energies_match_the_shared_evaluator() {
        let m = model(8, (1.0, 3.0));
        let g = m.grid;
        let h = 1e-3;
        let phi0 = CellField::from_fn(&g, |x| 0.1 + 0.4 * (PI * x[0]).cos() * (PI * x[1]).cos());
        let s0 = SimState::initial(&m, &phi0, FaceField::zeros(&g), h).unwrap();
        let (s1, r) = step(&m, &s0, h).unwrap();
        let (e1, e1h) = m.energy(&s1.phi, &s1.flow.v, h).unwrap();
        let (_, e0h) = m.energy(&s0.phi, &s0.flow.v, h).unwrap();
        assert_eq!(r.energy, e1);
        assert_eq!(r.energy_h.to_bits(), e1h.to_bits());
        assert_eq!(r.energy_old_h.to_bits(), e0h.to_bits());
        assert_eq!(check_report(&r, &m.settings), CheckOutcome::Pass);
    }

    #[test]
    fn zero_steps_keep_only_the_initial_state() {
        let m = model(4, (1.0, 1.0));
        let g = m.grid;
        let s0 = SimState::initial(&m, &CellField::constant(&g, 0.0), FaceField::zeros(&g), 1e-3).unwrap();
        let traj = run(&m, s0, 1e-3, 0, 1).unwrap();
        assert!(traj.reports.is_empty());
        assert_eq!(traj.snapshots.len(), 1);
    }
}
