//! End-to-end tests of the command-line interface: reproducibility of the
//! emitted files, the output schemas, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hct() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hct"))
}

fn run(args: &[&str]) -> Output {
    hct().args(args).output().expect("binary runs")
}

fn write_demo(dir: &Path) -> (PathBuf, PathBuf) {
    use std::io::Write;
    let data = dir.join("trial.csv");
    let mut f = std::fs::File::create(&data).unwrap();
    writeln!(f, "d,a,y,x1,x2").unwrap();
    // deterministic synthetic rows covering all strata
    let mut state = 88172645463325252u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    writeln!(f, "1,1,1,1,0").unwrap();
    writeln!(f, "1,0,0,0,1").unwrap();
    writeln!(f, "0,0,1,1,1").unwrap();
    for _ in 0..400 {
        let d = u8::from(next() < 0.4);
        let a = if d == 1 { u8::from(next() < 0.5) } else { 0 };
        let x1 = u8::from(next() < 0.6);
        let x2 = u8::from(next() < 0.5);
        let y = u8::from(next() < 0.25 + 0.2 * f64::from(x1) + 0.15 * f64::from(a));
        writeln!(f, "{d},{a},{y},{x1},{x2}").unwrap();
    }
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
seed = 509

[data]
path = "{}"

[data.columns]
d = "d"
a = "a"
y = "y"
covariates = ["x1", "x2"]

[learner]
kind = "forest"
trees = 30
max_depth = 3

[sensitivity]
c2_y = 0.04
c2_d = 0.03

[output]
influence_dump = true
"#,
            data.display()
        ),
    )
    .unwrap();
    (data, config)
}

#[test]
fn analyze_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = write_demo(tmp.path());
    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    let config_s = config.to_str().unwrap();
    assert!(run(&["analyze", config_s, "--out", out1.to_str().unwrap()])
        .status
        .success());
    assert!(run(&["analyze", config_s, "--out", out2.to_str().unwrap()])
        .status
        .success());
    for name in ["estimate.toml", "sensitivity.toml", "influence.csv"] {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn zero_strength_region_equals_naive_interval_and_grows_with_c2() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = write_demo(tmp.path());
    let config_s = config.to_str().unwrap();
    let out = tmp.path().join("zero");
    let output = run(&[
        "analyze",
        config_s,
        "--set",
        "sensitivity.c2_y=0.0",
        "--set",
        "sensitivity.c2_d=0.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(out.join("sensitivity.toml")).unwrap();
    let fetch = |key: &str| -> f64 {
        text.lines()
            .find(|l| l.trim_start().starts_with(key))
            .and_then(|l| l.split('=').nth(1))
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or_else(|| panic!("key {key} missing in\n{text}"))
    };
    let est = std::fs::read_to_string(out.join("estimate.toml")).unwrap();
    let fetch_est = |key: &str| -> f64 {
        est.lines()
            .find(|l| l.trim_start().starts_with(key))
            .and_then(|l| l.split('=').nth(1))
            .and_then(|v| v.trim().parse().ok())
            .unwrap()
    };
    assert!((fetch("region_low") - fetch_est("ci_low")).abs() < 1e-10);
    assert!((fetch("region_high") - fetch_est("ci_high")).abs() < 1e-10);

    let out2 = tmp.path().join("wide");
    assert!(run(&[
        "analyze",
        config_s,
        "--set",
        "sensitivity.c2_y=0.04",
        "--set",
        "sensitivity.c2_d=0.03",
        "--out",
        out2.to_str().unwrap(),
    ])
    .status
    .success());
    let wide = std::fs::read_to_string(out2.join("sensitivity.toml")).unwrap();
    let fetch_wide = |key: &str| -> f64 {
        wide.lines()
            .find(|l| l.trim_start().starts_with(key))
            .and_then(|l| l.split('=').nth(1))
            .and_then(|v| v.trim().parse().ok())
            .unwrap()
    };
    assert!(fetch_wide("region_low") < fetch("region_low"));
    assert!(fetch_wide("region_high") > fetch("region_high"));
}

#[test]
fn contour_and_benchmark_emit_expected_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = write_demo(tmp.path());
    let config_s = config.to_str().unwrap();
    let out = tmp.path().join("contour");
    let output = run(&[
        "contour",
        config_s,
        "--set",
        "sensitivity.grid.points=4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let grid = std::fs::read_to_string(out.join("contour.csv")).unwrap();
    let mut lines = grid.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    assert_eq!(
        lines.next().unwrap(),
        "c2_d,c2_y,lower,upper,significant"
    );
    assert_eq!(lines.count(), 16);
    assert!(out.join("robustness.toml").exists());

    let bout = tmp.path().join("bench");
    let output = run(&["benchmark", config_s, "--out", bout.to_str().unwrap()]);
    assert!(output.status.success(), "{:?}", output);
    let table = std::fs::read_to_string(bout.join("benchmark.csv")).unwrap();
    let mut lines = table.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    assert_eq!(
        lines.next().unwrap(),
        "covariate,name,c2_y,c2_d,rho,implied_bound"
    );
    assert_eq!(lines.count(), 2); // one per covariate
}

#[test]
fn simulate_writes_tidy_results() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = write_demo(tmp.path());
    let out = tmp.path().join("sim");
    let output = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--set",
        "simulation.preset=\"fig3-nobias\"",
        "--set",
        "simulation.replicates=8",
        "--set",
        "simulation.n1_grid=[60]",
        "--set",
        "simulation.n0_grid=[100]",
        "--set",
        "learner.trees=10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    assert_eq!(
        lines.next().unwrap(),
        "method,n1,n0,zeta,beta,scenario,replicates,failures,reject_rate,ci_low,ci_high,mean_width"
    );
    assert_eq!(lines.count(), 3); // three methods for the single cell
}

#[test]
fn simulate_bias_bound_preset_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, config) = write_demo(tmp.path());
    let out = tmp.path().join("fig2");
    let output = run(&[
        "simulate",
        config.to_str().unwrap(),
        "--set",
        "simulation.preset=\"fig2-weak\"",
        "--set",
        "simulation.replicates=10",
        "--set",
        "simulation.q_grid=[0.5]",
        "--set",
        "simulation.target_n1=60",
        "--set",
        "learner.trees=10",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header = lines.next().unwrap();
    for col in ["mean_b_hat", "b_true", "frac_bound_holds", "q"] {
        assert!(header.contains(col), "missing column {col} in {header}");
    }
    assert_eq!(lines.count(), 1); // one row for the single q cell
}

#[test]
fn oracle_prints_null_truths() {
    let output = run(&["oracle", "--zeta", "0.3", "--beta", "0"]);
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("psi_star   = 0\n"), "{text}");
    assert!(text.contains("b          = 0\n"), "{text}");
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, config) = write_demo(tmp.path());

    // config error: unknown key
    let out = run(&[
        "analyze",
        config.to_str().unwrap(),
        "--set",
        "crossfit.bogus=1",
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");

    // config error: missing file
    let out = run(&["analyze", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // data error: corrupt cell
    let bad = tmp.path().join("bad.csv");
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("0,1,1,1,1\n"); // external treated row
    std::fs::write(&bad, text).unwrap();
    let out = run(&[
        "analyze",
        config.to_str().unwrap(),
        "--set",
        &format!("data.path=\"{}\"", bad.display()),
    ]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("external unit"), "{stderr}");
}
