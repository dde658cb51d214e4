//! Randomized invariants over the public API.

use std::sync::{Arc, OnceLock};

use nlagg::config::SimConfig;
use nlagg::diagnostics::total_energy;
use nlagg::flow::{self, FluidParams};
use nlagg::initial::InitialData;
use nlagg::kernel::KernelSpec;
use nlagg::nonlocal::{NonlocalForm, QuadratureOptions};
use nlagg::potential::PotentialParams;
use nlagg::smoothing::smooth;
use nlagg::stepper::{phase_subsolve, Model, PhaseInput, SolverSettings};
use nlagg::{CellField, FaceField, Grid};
use proptest::prelude::*;

fn grid() -> Grid {
    Grid::new(12, 10, 1.0, 0.8).unwrap()
}

fn model() -> &'static Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL.get_or_init(|| {
        let g = grid();
        let form =
            NonlocalForm::assemble(&g, &KernelSpec::fractional(1.5).unwrap(), QuadratureOptions::default()).unwrap();
        Model::new(
            Arc::new(form),
            PotentialParams::default(),
            FluidParams {
                rho1: 1.0,
                rho2: 3.0,
                ..FluidParams::default()
            },
            SolverSettings::default(),
        )
        .unwrap()
    })
}

/// Discretely divergence-free velocity from a stream function on the nodes
/// that vanishes on the walls.
fn stream_velocity(g: &Grid, psi: impl Fn(f64, f64) -> f64) -> FaceField {
    let node = |i: usize, j: usize| {
        if i == 0 || j == 0 || i == g.nx || j == g.ny {
            0.0
        } else {
            psi(i as f64 * g.hx, j as f64 * g.hy)
        }
    };
    let mut v = FaceField::zeros(g);
    for j in 0..g.ny {
        for i in 0..=g.nx {
            v[g.x_face(i, j)] = (node(i, j + 1) - node(i, j)) / g.hy;
        }
    }
    for j in 0..=g.ny {
        for i in 0..g.nx {
            v[g.y_face(i, j)] = -(node(i + 1, j) - node(i, j)) / g.hx;
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phase_subsolve_conserves_mass(
        seed in 0u64..10_000,
        mean in -0.6f64..0.6,
        amplitude in 0.0f64..0.3,
        a in -0.2f64..0.2,
        k in 1.0f64..4.0,
        h in 1e-4f64..2e-3,
    ) {
        let m = model();
        let g = m.grid;
        let phi_k = InitialData::RandomSmooth { seed, mean, amplitude, modes: 3 }.generate(&g).unwrap().phi;
        let phi_s = smooth(&phi_k, h, &g).unwrap();
        let v = stream_velocity(&g, |x, y| a * (k * x).sin() * (k * y + 0.3).cos());
        let mob = flow::face_mobility(&phi_s, &m.fluid, &g);
        let sol = phase_subsolve(m, &PhaseInput { phi_k: &phi_k, phi_s: &phi_s, v: &v, mobility: &mob, h }, None).unwrap();
        let drift = g.cell_integral(&sol.phi).unwrap() - g.cell_integral(&phi_k).unwrap();
        prop_assert!(drift.abs() <= 1e-12, "drift {}", drift);
        prop_assert!(sol.phi.max_abs() < 1.0);
        prop_assert!(sol.residual <= m.settings.tol_newton);
    }

    #[test]
    fn smoothing_keeps_mean_and_range(seed in 0u64..10_000, h in 1e-4f64..1e-1) {
        let g = grid();
        let phi = InitialData::RandomSmooth { seed, mean: 0.1, amplitude: 0.85, modes: 6 }.generate(&g).unwrap().phi;
        let u = smooth(&phi, h, &g).unwrap();
        let (lo, hi) = phi.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!((g.cell_integral(&u).unwrap() - g.cell_integral(&phi).unwrap()).abs() <= 1e-12);
        prop_assert!(u.iter().all(|&x| x >= lo - 1e-12 && x <= hi + 1e-12));
    }

    #[test]
    fn energies_are_bounded_below(seed in 0u64..10_000, mean in -0.9f64..0.9, amplitude in 0.0f64..1.0, a in -1.0f64..1.0) {
        let m = model();
        let g = m.grid;
        let phi = InitialData::RandomSmooth { seed, mean, amplitude, modes: 4 }.generate(&g).unwrap().phi;
        let v = stream_velocity(&g, |x, y| a * (3.0 * x).sin() * (2.0 * y).sin());
        let e = total_energy(&phi, &v, &g, &m.form, &m.fluid, &m.potential).unwrap();
        prop_assert!(e.kinetic >= 0.0);
        prop_assert!(e.nonlocal >= -1e-12);
        prop_assert!(e.potential >= m.potential.psi_min() * g.area() - 1e-12);
        prop_assert_eq!(e.total, e.kinetic + e.free);
    }

    #[test]
    fn nonlocal_form_is_symmetric_and_nonnegative(seed in 0u64..10_000) {
        let m = model();
        let g = m.grid;
        let u = InitialData::RandomSmooth { seed, mean: 0.0, amplitude: 0.9, modes: 8 }.generate(&g).unwrap().phi;
        let w = InitialData::RandomSmooth { seed: seed + 1, mean: 0.3, amplitude: 0.5, modes: 8 }.generate(&g).unwrap().phi;
        let uw = m.form.apply_bilinear(&u, &w).unwrap();
        let wu = m.form.apply_bilinear(&w, &u).unwrap();
        prop_assert!((uw - wu).abs() <= 1e-12 * (1.0 + uw.abs()));
        prop_assert!(m.form.apply_bilinear(&u, &u).unwrap() >= 0.0);
        let c = CellField::constant(&g, 0.4);
        prop_assert_eq!(m.form.apply_bilinear(&u, &c).unwrap(), 0.0);
        prop_assert!(m.form.apply_bilinear(&c, &u).unwrap().abs() <= 1e-12 * m.form.max_abs_entry());
    }

    #[test]
    fn config_echo_round_trips(
        nx in 2usize..40,
        ny in 2usize..40,
        alpha in 1.01f64..1.99,
        theta in 0.1f64..1.0,
        gap in 0.01f64..2.0,
        rho1 in 0.1f64..10.0,
        rho2 in 0.1f64..10.0,
        h in 1e-6f64..1e-1,
        n_steps in 0usize..1000,
        cadence in 0usize..50,
    ) {
        let text = format!(
            "[grid]\nnx = {nx}\nny = {ny}\n[kernel]\nalpha = {alpha:?}\n[potential]\ntheta = {theta:?}\ntheta_c = {:?}\n\
             [fluid]\nrho1 = {rho1:?}\nrho2 = {rho2:?}\n[time]\nh = {h:?}\nn_steps = {n_steps}\n[output]\ncadence = {cadence}\n\
             [initial]\nkind = \"constant\"\nvalue = 0.0\n",
            theta + gap
        );
        let cfg = SimConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}

#[test]
fn stream_velocity_is_divergence_free() {
    let g = grid();
    let v = stream_velocity(&g, |x, y| (2.0 * x).sin() * (3.0 * y).cos());
    let d = g.discrete_divergence(&v).unwrap();
    assert!(d.max_abs() < 1e-12);
    assert!(v.max_abs() > 0.1);
}
