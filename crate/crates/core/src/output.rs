//! Run outputs: a CSV series with one row per step, legacy VTK snapshots
//! and a JSON summary.
//!
//! Snapshots carry the face velocities and the pressure next to the
//! cell-centered fields so that a state can be reloaded bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::SimConfig;
use crate::diagnostics::CheckOutcome;
use crate::error::{Error, Result};
use crate::grid::{CellField, FaceField, Grid};
use crate::stepper::{self, SimState, SolverSettings, StepReport, Trajectory};

pub const SERIES_FILE: &str = "series.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

pub const SERIES_HEADER: [&str; 18] = [
    "step",
    "t",
    "h",
    "E_kin",
    "E_free",
    "E_tot",
    "E_tot_h",
    "dissipation",
    "slack",
    "mass",
    "mass_drift",
    "max_abs_phi",
    "coupled_residual",
    "outer_iterations",
    "newton_iterations",
    "krylov_iterations",
    "substeps",
    "max_flux",
];

fn series_row(r: &StepReport) -> String {
    let reals = [
        r.t,
        r.h,
        r.energy.kinetic,
        r.energy.free,
        r.energy.total,
        r.energy_h,
        r.viscous_dissipation + r.mixing_dissipation,
        r.slack,
        r.mass,
        r.mass_drift,
        r.max_abs_phi,
        r.coupled_residual,
    ];
    let mut line = r.step.to_string();
    for x in reals {
        write!(line, ",{x:.16e}").unwrap();
    }
    let krylov = r.phase_krylov_iterations + r.momentum_krylov_iterations;
    write!(
        line,
        ",{},{},{},{},{:.16e}",
        r.outer_iterations, r.newton_iterations, krylov, r.substeps, r.max_flux
    )
    .unwrap();
    line
}

/// The series as CSV text: header, the initial state, then one row per step.
pub fn series_csv(initial: &StepReport, reports: &[StepReport]) -> String {
    let mut out = SERIES_HEADER.join(",");
    out.push('\n');
    for r in std::iter::once(initial).chain(reports) {
        out.push_str(&series_row(r));
        out.push('\n');
    }
    out
}

/// One parsed row of a series file.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub step: usize,
    pub t: f64,
    pub e_tot_h: f64,
    pub slack: f64,
    pub mass: f64,
    pub mass_drift: f64,
    pub max_abs_phi: f64,
    pub coupled_residual: f64,
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>> {
    let text = fs::read_to_string(path)?;
    let fail = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    if header != SERIES_HEADER {
        return Err(fail(1, "unexpected header".into()));
    }
    let col = |name: &str| SERIES_HEADER.iter().position(|h| *h == name).unwrap();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != SERIES_HEADER.len() {
            return Err(fail(
                lineno,
                format!("expected {} fields, found {}", SERIES_HEADER.len(), fields.len()),
            ));
        }
        let real = |name: &str| -> Result<f64> {
            fields[col(name)]
                .parse::<f64>()
                .map_err(|e| fail(lineno, format!("{name}: {e}")))
        };
        rows.push(SeriesRow {
            step: fields[0].parse().map_err(|e| fail(lineno, format!("step: {e}")))?,
            t: real("t")?,
            e_tot_h: real("E_tot_h")?,
            slack: real("slack")?,
            mass: real("mass")?,
            mass_drift: real("mass_drift")?,
            max_abs_phi: real("max_abs_phi")?,
            coupled_residual: real("coupled_residual")?,
        });
    }
    Ok(rows)
}

/// Outcome of one named predicate over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predicate {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Maximum total mass drift over a run.
pub const TOTAL_MASS_TOLERANCE: f64 = 1e-10;

/// Run-level predicates evaluated on a series: per-step energy slack,
/// monotone energy, per-step and total mass drift, bounds, coupled residual
/// and ordering of the rows.
pub fn check_series(rows: &[SeriesRow], s: &SolverSettings) -> Vec<Predicate> {
    let mut out = Vec::new();
    let mut push = |name, failure: Option<String>| {
        out.push(Predicate {
            name,
            passed: failure.is_none(),
            detail: failure.unwrap_or_default(),
        })
    };
    if rows.is_empty() {
        push("nonempty", Some("series has no rows".into()));
        return out;
    }
    let steps = &rows[1..];
    let pairs = rows.windows(2);

    push(
        "ordering",
        rows.windows(2)
            .find(|w| !(w[1].step == w[0].step + 1 && w[1].t > w[0].t))
            .map(|w| format!("row for step {} does not follow step {}", w[1].step, w[0].step)),
    );
    push(
        "energy",
        pairs
            .clone()
            .find(|w| !(w[1].slack >= -s.energy_floor(w[0].e_tot_h)))
            .map(|w| format!("step {}: slack {:e}", w[1].step, w[1].slack)),
    );
    push(
        "monotone",
        pairs
            .clone()
            .find(|w| !(w[1].e_tot_h <= w[0].e_tot_h + s.energy_floor(w[0].e_tot_h)))
            .map(|w| {
                format!(
                    "step {}: energy rose from {:e} to {:e}",
                    w[1].step, w[0].e_tot_h, w[1].e_tot_h
                )
            }),
    );
    push(
        "mass",
        steps
            .iter()
            .find(|r| !(r.mass_drift.abs() <= s.tol_mass))
            .map(|r| format!("step {}: drift {:e}", r.step, r.mass_drift))
            .or_else(|| {
                let total = rows.last().unwrap().mass - rows[0].mass;
                (!(total.abs() <= TOTAL_MASS_TOLERANCE)).then(|| format!("total drift {total:e}"))
            }),
    );
    push(
        "bounds",
        rows.iter()
            .find(|r| !(r.max_abs_phi < 1.0))
            .map(|r| format!("step {}: max |phi| = {}", r.step, r.max_abs_phi)),
    );
    push(
        "residual",
        steps
            .iter()
            .find(|r| !(r.coupled_residual <= s.tol_couple))
            .map(|r| format!("step {}: coupled residual {:e}", r.step, r.coupled_residual)),
    );
    out
}

/// Machine-readable description of a finished (or stopped) run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub steps_requested: usize,
    pub steps_completed: usize,
    pub final_time: f64,
    pub initial_energy_h: f64,
    pub final_energy_h: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub passed: bool,
    pub predicates: Vec<Predicate>,
    /// First per-step check failure, if the run stopped early.
    pub violation: Option<StepViolation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepViolation {
    pub step: usize,
    pub outcome: CheckOutcome,
}

/// The rows [`read_series`] would return for these reports.
fn rows_of(initial: &StepReport, reports: &[StepReport]) -> Vec<SeriesRow> {
    std::iter::once(initial)
        .chain(reports)
        .map(|r| SeriesRow {
            step: r.step,
            t: r.t,
            e_tot_h: r.energy_h,
            slack: r.slack,
            mass: r.mass,
            mass_drift: r.mass_drift,
            max_abs_phi: r.max_abs_phi,
            coupled_residual: r.coupled_residual,
        })
        .collect()
}

pub fn summarize(traj: &Trajectory, steps_requested: usize, s: &SolverSettings) -> RunSummary {
    let predicates = check_series(&rows_of(&traj.initial_report, &traj.reports), s);
    let last = traj.reports.last().unwrap_or(&traj.initial_report);
    let passed = traj.violation.is_none() && predicates.iter().all(|p| p.passed);
    RunSummary {
        steps_requested,
        steps_completed: traj.reports.len(),
        final_time: last.t,
        initial_energy_h: traj.initial_report.energy_h,
        final_energy_h: last.energy_h,
        initial_mass: traj.initial_report.mass,
        final_mass: last.mass,
        passed,
        predicates,
        violation: traj
            .violation
            .clone()
            .map(|(step, outcome)| StepViolation { step, outcome }),
        error: None,
    }
}

/// Runs a validated configuration and writes every output into `dir`,
/// including an echo of the configuration. A step that fails to solve stops
/// the run; the outputs then describe the steps before it.
pub fn run_config(cfg: &SimConfig, dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let model = cfg.model()?;
    let init = cfg.initial.generate(&model.grid)?;
    let h = cfg.time.h;
    let s0 = SimState::initial(&model, &init.phi, init.v, h)?;
    let (traj, failure) = stepper::run_partial(&model, s0, h, cfg.time.n_steps, cfg.output.cadence, |_, _| {})?;
    let mut summary = summarize(&traj, cfg.time.n_steps, &model.settings);
    if let Some(e) = failure {
        summary.passed = false;
        summary.error = Some(e.to_string());
    }
    write_outputs(dir, &traj, &summary, &model.grid)?;
    fs::write(dir.join(CONFIG_ECHO_FILE), cfg.to_toml_string())?;
    Ok(summary)
}

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("snapshot_{step:06}.vtk"))
}

/// Writes the series, snapshots and summary into `dir`, creating it.
pub fn write_outputs(dir: &Path, traj: &Trajectory, summary: &RunSummary, grid: &Grid) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let series = dir.join(SERIES_FILE);
    fs::write(&series, series_csv(&traj.initial_report, &traj.reports))?;
    written.push(series);
    for state in &traj.snapshots {
        let path = snapshot_path(dir, state.step);
        write_snapshot(&path, state, grid)?;
        written.push(path);
    }
    let path = dir.join(SUMMARY_FILE);
    fs::write(
        &path,
        serde_json::to_string_pretty(summary).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    written.push(path);
    Ok(written)
}

/// Legacy VTK structured points. Cell data: `phi`, `mu`, `p` and the
/// velocity averaged to cell centers. Point data: `face_u` holds x-face
/// `(i, j)` at point `(i, j)` and `face_v` holds y-face `(i, j)` at point
/// `(i, j)`, padded with zeros where a point has no face.
pub fn snapshot_vtk(state: &SimState, grid: &Grid) -> String {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "nlagg snapshot step={} t={:e}", state.step, state.t).unwrap();
    writeln!(s, "ASCII\nDATASET STRUCTURED_POINTS").unwrap();
    writeln!(s, "DIMENSIONS {} {} 1", nx + 1, ny + 1).unwrap();
    writeln!(s, "ORIGIN 0 0 0").unwrap();
    writeln!(s, "SPACING {:e} {:e} 1", grid.hx, grid.hy).unwrap();
    writeln!(s, "CELL_DATA {}", grid.num_cells()).unwrap();
    for (name, field) in [("phi", &state.phi), ("mu", &state.mu), ("p", &state.flow.p)] {
        writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default").unwrap();
        for x in field.iter() {
            writeln!(s, "{x:e}").unwrap();
        }
    }
    writeln!(s, "VECTORS velocity double").unwrap();
    for [u, v] in grid.faces_to_cell_vectors(&state.flow.v) {
        writeln!(s, "{u:e} {v:e} 0").unwrap();
    }
    writeln!(s, "POINT_DATA {}", (nx + 1) * (ny + 1)).unwrap();
    writeln!(s, "SCALARS face_u double 1\nLOOKUP_TABLE default").unwrap();
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if j < ny { state.flow.v[grid.x_face(i, j)] } else { 0.0 };
            writeln!(s, "{x:e}").unwrap();
        }
    }
    writeln!(s, "SCALARS face_v double 1\nLOOKUP_TABLE default").unwrap();
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i < nx { state.flow.v[grid.y_face(i, j)] } else { 0.0 };
            writeln!(s, "{x:e}").unwrap();
        }
    }
    s
}

pub fn write_snapshot(path: &Path, state: &SimState, grid: &Grid) -> Result<()> {
    fs::write(path, snapshot_vtk(state, grid))?;
    Ok(())
}

/// Fields recovered from a snapshot file.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub phi: CellField,
    pub mu: CellField,
    pub p: CellField,
    pub v: FaceField,
}

pub fn read_snapshot(path: &Path, grid: &Grid) -> Result<Snapshot> {
    let text = fs::read_to_string(path)?;
    parse_snapshot(&text, grid).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_snapshot(text: &str, grid: &Grid) -> std::result::Result<Snapshot, String> {
    let mut lines = text.lines();
    let title = lines.nth(1).ok_or("missing title line")?;
    let mut step = None;
    let mut t = None;
    for word in title.split_whitespace() {
        if let Some(v) = word.strip_prefix("step=") {
            step = v.parse::<usize>().ok();
        } else if let Some(v) = word.strip_prefix("t=") {
            t = v.parse::<f64>().ok();
        }
    }
    let (step, t) = step.zip(t).ok_or("title lacks step= and t=")?;
    let dims = format!("DIMENSIONS {} {} 1", grid.nx + 1, grid.ny + 1);
    if !text.lines().any(|l| l.trim() == dims) {
        return Err(format!("grid mismatch: expected '{dims}'"));
    }
    let np = (grid.nx + 1) * (grid.ny + 1);
    let scalars = |name: &str, count: usize| -> std::result::Result<Vec<f64>, String> {
        let header = format!("SCALARS {name} double 1");
        let mut it = text.lines().skip_while(|l| l.trim() != header);
        it.next().ok_or(format!("missing array {name}"))?;
        it.next(); // lookup table
        let vals: std::result::Result<Vec<f64>, _> = it.take(count).map(|l| l.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| format!("{name}: {e}"))?;
        if vals.len() != count {
            return Err(format!("{name}: expected {count} values, found {}", vals.len()));
        }
        Ok(vals)
    };
    let nc = grid.num_cells();
    let (phi, mu, p) = (scalars("phi", nc)?, scalars("mu", nc)?, scalars("p", nc)?);
    let (fu, fv) = (scalars("face_u", np)?, scalars("face_v", np)?);
    let mut v = vec![0.0; grid.num_faces()];
    let point = |i: usize, j: usize| i + (grid.nx + 1) * j;
    for j in 0..grid.ny {
        for i in 0..=grid.nx {
            v[grid.x_face(i, j)] = fu[point(i, j)];
        }
    }
    for j in 0..=grid.ny {
        for i in 0..grid.nx {
            v[grid.y_face(i, j)] = fv[point(i, j)];
        }
    }
    Ok(Snapshot {
        step,
        t,
        phi: CellField::wrap(phi),
        mu: CellField::wrap(mu),
        p: CellField::wrap(p),
        v: FaceField::wrap(v),
    })
}
