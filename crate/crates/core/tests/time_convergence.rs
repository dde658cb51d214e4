//! First-order self-convergence in time at a horizon where the solution is
//! still far from its constant equilibrium.

use nlagg::config::SimConfig;
use nlagg::study::study_with_steps;

#[test]
fn halving_the_step_halves_the_difference() {
    let cfg = SimConfig::from_toml_str(
        r#"
[grid]
nx = 32
ny = 32

[fluid]
rho1 = 1.0
rho2 = 3.0

[time]
h = 2e-4
n_steps = 20

[initial]
kind = "cosine"
mean = 0.2
amplitude = 0.3
frequency = 0.5
"#,
    )
    .unwrap();
    let report = study_with_steps(&cfg, &[20, 40, 80]).unwrap();
    assert!(report.completed());
    let d = &report.differences;
    assert!(d[0] > 1e-6, "{d:?}");
    let ratio = d[0] / d[1];
    eprintln!("differences {d:?}, orders {:?}", report.orders);
    assert!((1.5..=3.0).contains(&ratio), "ratio {ratio}, differences {d:?}");
    assert!((0.7..=1.5).contains(&report.orders[0]));
}
