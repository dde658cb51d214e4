use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlagg::config::{parse_config, SimConfig};
use nlagg::output::{self, check_series, read_series};
use nlagg::stepper::SolverSettings;
use nlagg::study::convergence_study;

/// Exit status when a run finishes but an acceptance predicate fails.
const VIOLATION: u8 = 1;
/// Exit status for usage, configuration and setup errors.
const USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "nlagg",
    version,
    about = "Nonlocal two-phase flow with non-matched densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a configuration, printing it with all defaults filled in.
    Validate { config: PathBuf },
    /// Run a configuration and write the series, snapshots and summary.
    Run {
        config: PathBuf,
        /// Output directory; overrides the configuration and NLAGG_OUTPUT_DIR.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Temporal self-convergence study at h, h/2, ...
    Study {
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a series file against the run-level predicates.
    Check { series: PathBuf },
}

fn load(path: &Path) -> Result<SimConfig, ExitCode> {
    parse_config(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(USAGE)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) | Err(code) => code,
    }
}

fn run(command: Command) -> Result<ExitCode, ExitCode> {
    let setup_error = |e: nlagg::Error| {
        eprintln!("error: {e}");
        ExitCode::from(USAGE)
    };
    match command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let init = cfg
                .initial
                .generate(&cfg.grid().map_err(setup_error)?)
                .map_err(setup_error)?;
            print!("{}", cfg.to_toml_string());
            println!("# initial mean {:.16e}, {} cells clamped", init.mean, init.clamped);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, output } => {
            let cfg = load(&config)?;
            let dir = output.unwrap_or_else(|| cfg.output_dir());
            let summary = output::run_config(&cfg, &dir).map_err(setup_error)?;
            for p in &summary.predicates {
                println!(
                    "{} {}{}",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    detail(&p.detail)
                );
            }
            if let Some(v) = &summary.violation {
                println!("stopped at step {}: {:?}", v.step, v.outcome);
            }
            if let Some(e) = &summary.error {
                println!("error: {e}");
            }
            println!(
                "{} of {} steps, E_tot_h {:.6e} -> {:.6e}, outputs in {}",
                summary.steps_completed,
                summary.steps_requested,
                summary.initial_energy_h,
                summary.final_energy_h,
                dir.display()
            );
            Ok(exit(summary.passed))
        }
        Command::Study { config, levels, output } => {
            let cfg = load(&config)?;
            let report = convergence_study(&cfg, levels).map_err(setup_error)?;
            for (l, level) in report.levels.iter().enumerate() {
                print!("level {l}: h = {:e}, {} steps", level.h, level.n_steps);
                match report.differences.get(l) {
                    Some(d) => println!(", difference to next {d:.6e}"),
                    None => println!(),
                }
            }
            for o in &report.orders {
                println!("order {o:.4}");
            }
            if let Some(f) = &report.failure {
                println!("error: {f}");
            }
            let dir = output.unwrap_or_else(|| cfg.output_dir());
            let json = serde_json::to_string_pretty(&report).expect("study report serializes");
            fs::create_dir_all(&dir)
                .and_then(|_| fs::write(dir.join("study.json"), json))
                .map_err(|e| setup_error(e.into()))?;
            Ok(exit(report.completed()))
        }
        Command::Check { series } => {
            let rows = read_series(&series).map_err(setup_error)?;
            let predicates = check_series(&rows, &SolverSettings::default());
            for p in &predicates {
                println!(
                    "{} {}{}",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    detail(&p.detail)
                );
            }
            Ok(exit(predicates.iter().all(|p| p.passed)))
        }
    }
}

fn detail(d: &str) -> String {
    if d.is_empty() {
        String::new()
    } else {
        format!(": {d}")
    }
}

fn exit(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(VIOLATION)
    }
}
