use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[grid]\nnx = 6\nny = 6\n\n[time]\nh = 1e-3\nn_steps = 3\n\n[fluid]\nrho1 = 1.0\nrho2 = 3.0\n";

fn nlagg(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nlagg"));
    cmd.args(args).env_remove("NLAGG_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = nlagg(&["validate", &cfg], &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("alpha = 1.5"), "{text}");
    assert!(text.contains("theta_c = 2.0"), "{text}");
    assert!(text.contains("initial mean"), "{text}");
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}\n[potential]\ntheta = 3.0\ntheta_c = 2.0\n"),
    );
    let out = nlagg(&["validate", &cfg], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("potential: require theta < theta_c"));
    assert_eq!(nlagg(&["run", "/nonexistent/run.toml"], &[]).status.code(), Some(2));
    assert_eq!(nlagg(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn run_then_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("from_env");
    let out = nlagg(&["run", &cfg], &[("NLAGG_OUTPUT_DIR", &out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS energy"));
    let series = out_dir.join("series.csv");
    assert_eq!(fs::read_to_string(&series).unwrap().lines().count(), 5);
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("config.toml").exists());

    let out = nlagg(&["check", series.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn check_flags_an_energy_increase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = nlagg(&["run", &cfg, "--output", out_dir.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let series = out_dir.join("series.csv");
    let text = fs::read_to_string(&series).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let col = lines[0].split(',').position(|c| c == "E_tot_h").unwrap();
    let mut fields: Vec<String> = lines[3].split(',').map(str::to_owned).collect();
    fields[col] = "1.0e3".into();
    lines[3] = fields.join(",");
    fs::write(&series, lines.join("\n")).unwrap();
    let out = nlagg(&["check", series.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL monotone"));
}

#[test]
fn study_reports_differences() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("study");
    let out = nlagg(
        &["study", &cfg, "--levels", "2", "--output", out_dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("difference to next"));
    assert!(out_dir.join("study.json").exists());
    let out = nlagg(&["study", &cfg, "--levels", "7"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
