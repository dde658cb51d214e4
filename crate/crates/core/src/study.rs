//! Temporal self-convergence: the same run at step sizes `h, h/2, ...`
//! compared at a common final time.

use std::sync::Arc;

use serde::Serialize;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::grid::{CellField, FaceField};
use crate::nonlocal::NonlocalForm;
use crate::stepper::{self, Model, SimState};

#[derive(Debug, Clone, Serialize)]
pub struct StudyLevel {
    pub h: f64,
    pub n_steps: usize,
    pub final_time: f64,
    pub final_energy_h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub levels: Vec<StudyLevel>,
    /// `‖phi^(h_i)(T) - phi^(h_{i+1})(T)‖` in the cell-weighted L² norm.
    pub differences: Vec<f64>,
    /// `log2` of successive difference ratios.
    pub orders: Vec<f64>,
    /// Set when a level failed; the fields above hold the levels before it.
    pub failure: Option<String>,
}

impl StudyReport {
    pub fn completed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs the configured problem to `T = h n_steps` at `levels` step sizes,
/// halving `h` each time.
pub fn convergence_study(cfg: &SimConfig, levels: usize) -> Result<StudyReport> {
    if !(2..=4).contains(&levels) {
        return Err(Error::param("study", format!("levels must lie in 2..=4, got {levels}")));
    }
    let steps: Vec<usize> = (0..levels).map(|l| cfg.time.n_steps << l).collect();
    study_with_steps(cfg, &steps)
}

/// Runs the configured problem to `T = h n_steps` once per entry of
/// `steps`, using `T / steps[i]` as the step size.
pub fn study_with_steps(cfg: &SimConfig, steps: &[usize]) -> Result<StudyReport> {
    cfg.validate()?;
    study_on_form(cfg, Arc::new(cfg.assemble_form()?), steps)
}

/// As [`study_with_steps`] with an already assembled form for the grid.
pub fn study_on_form(cfg: &SimConfig, form: Arc<NonlocalForm>, steps: &[usize]) -> Result<StudyReport> {
    if steps.contains(&0) {
        return Err(Error::param("study", "every level needs at least one step"));
    }
    let model = cfg.model_with(form)?;
    let grid = model.grid;
    let t_end = cfg.time.h * cfg.time.n_steps as f64;
    let init = cfg.initial.generate(&grid)?;

    let mut report = StudyReport {
        levels: Vec::new(),
        differences: Vec::new(),
        orders: Vec::new(),
        failure: None,
    };
    let mut finals: Vec<CellField> = Vec::new();
    for &n in steps {
        let h = t_end / n as f64;
        let outcome = run_level(&model, &init.phi, &init.v, h, n);
        let (state, energy) = match outcome {
            Ok(x) => x,
            Err(e) => {
                report.failure = Some(format!("level h = {h:e}: {e}"));
                break;
            }
        };
        report.levels.push(StudyLevel {
            h,
            n_steps: n,
            final_time: state.t,
            final_energy_h: energy,
        });
        if let Some(prev) = finals.last() {
            let d: Vec<f64> = prev.iter().zip(state.phi.iter()).map(|(a, b)| a - b).collect();
            report.differences.push(grid.cell_norm(&d));
        }
        finals.push(state.phi);
    }
    report.orders = report.differences.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(report)
}

fn run_level(model: &Model, phi0: &CellField, v0: &FaceField, h: f64, n: usize) -> Result<(SimState, f64)> {
    let s0 = SimState::initial(model, phi0, v0.clone(), h)?;
    let traj = stepper::run(model, s0, h, n, 0)?;
    if let Some((step, outcome)) = traj.violation {
        return Err(Error::Config(format!("step {step} failed its checks: {outcome:?}")));
    }
    let e = traj.reports.last().map_or(traj.initial_report.energy_h, |r| r.energy_h);
    Ok((traj.final_state, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(initial: &str) -> SimConfig {
        SimConfig::from_toml_str(&format!(
            "[grid]\nnx = 8\nny = 8\n[time]\nh = 2e-3\nn_steps = 3\n[fluid]\nrho1 = 1.0\nrho2 = 3.0\n[initial]\n{initial}\n"
        ))
        .unwrap()
    }

    #[test]
    fn identical_step_sizes_give_zero_difference() {
        let c = cfg("kind = \"cosine\"\nmean = 0.1\namplitude = 0.4");
        let r = study_with_steps(&c, &[3, 3]).unwrap();
        assert!(r.completed());
        assert_eq!(r.differences, [0.0]);
        assert!(r.orders.is_empty());
    }

    #[test]
    fn stationary_data_has_vanishing_differences() {
        let c = cfg("kind = \"constant\"\nvalue = -0.3");
        let r = convergence_study(&c, 3).unwrap();
        assert_eq!(r.levels.len(), 3);
        assert_eq!(r.levels.iter().map(|l| l.n_steps).collect::<Vec<_>>(), [3, 6, 12]);
        assert!(r.differences.iter().all(|&d| d <= c.solver.tol_couple));
        for l in &r.levels {
            assert!((l.final_time - 6e-3).abs() < 1e-15);
        }
    }

    #[test]
    fn level_count_is_checked() {
        let c = cfg("kind = \"constant\"\nvalue = 0.0");
        assert!(convergence_study(&c, 1).is_err());
        assert!(convergence_study(&c, 5).is_err());
    }

    #[test]
    fn failing_level_keeps_partial_results() {
        let mut c = cfg("kind = \"cosine\"\nmean = 0.1\namplitude = 0.4");
        c.solver.max_outer = 1;
        c.solver.tol_couple = 1e-300;
        let r = study_with_steps(&c, &[3, 6]).unwrap();
        assert!(!r.completed());
        assert!(r.levels.is_empty());
    }
}
