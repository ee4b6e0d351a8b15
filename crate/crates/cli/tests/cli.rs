use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use contact_wkam_cli::parse_config_str;
use tempfile::TempDir;

fn run(sub: &str, config: &str, dir: &Path) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_contact-wkam"))
        .arg(sub)
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = parse_config_str("model.family = quadratic_contact\nmodel.dim = 1\ngrid.n = 256\n").unwrap();
    assert_eq!(cfg.n, 256);
    assert_eq!(cfg.model.dim, 1);
    assert_eq!(cfg.model.v_max, 8.0);
    // largest step with v_max dt <= 4 h
    assert_eq!(cfg.dt, 4.0 / 256.0 / 8.0);
    assert_eq!(cfg.fixed_point.tol_fix, 1e-6);
    assert_eq!(cfg.verify.seed, 42);
    assert_eq!(cfg.scheme().n_v, 33);
}

#[test]
fn locality_violation_names_the_constraint() {
    let err = parse_config_str("model.family = quadratic_contact\ngrid.n = 256\ntime.dt = 5e-3\n").unwrap_err();
    assert_eq!(err.key.as_deref(), Some("time.dt"));
    assert_eq!(err.line, Some(3));
    assert!(err.message.contains("v_max * dt <= 4 * h"), "{err}");
}

#[test]
fn unknown_family_lists_the_valid_ones() {
    let err = parse_config_str("model.family = harmonic\n").unwrap_err();
    let msg = err.to_string();
    for name in [
        "quadratic_contact",
        "manufactured",
        "pendulum_dissipative",
        "discounted_mechanical",
        "custom_coefficients",
    ] {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn unknown_key_exits_with_usage_code() {
    let dir = TempDir::new().unwrap();
    let out = run("solve", "model.family = quadratic_contact\ngrid.size = 64\n", dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = text(&out.stderr);
    assert!(err.contains("grid.size") && err.contains(":2:"), "{err}");
}

#[test]
fn missing_config_file_exits_with_usage_code() {
    let out = Command::new(env!("CARGO_BIN_EXE_contact-wkam"))
        .args(["audit", "/nonexistent/run.cfg"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_quadratic_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(
        "verify",
        "model.family = quadratic_contact\ngrid.n = 64\ntime.dt = 5e-3\nverify.action_tuples = 2\n",
        dir.path(),
    );
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}{}", text(&out.stderr));
    assert!(stdout.contains("all invariants passed"));
    for name in ["comparison", "backward_nonexpansive", "forward_expansion", "strict_contraction", "action_reversibility"] {
        assert!(stdout.contains(name), "{stdout}");
    }
    assert!(!stdout.contains("FAIL"));
    assert!(dir.path().join("out/verify.txt").exists());
}

#[test]
fn solve_manufactured_matches_w() {
    let dir = TempDir::new().unwrap();
    let out = run(
        "solve",
        "model.family = manufactured\nmodel.amplitude = 0.3\ngrid.n = 128\ntime.dt = 2e-3\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let rows = csv_rows(&dir.path().join("out/u_minus.csv"));
    assert_eq!(rows.len(), 128);
    let err = rows
        .iter()
        .map(|r| (r[1] - 0.3 * (std::f64::consts::TAU * r[0]).cos()).abs())
        .fold(0.0, f64::max);
    assert!(err <= 2e-2, "sup error {err}");
    for name in ["u_plus.csv", "residual.csv", "convergence_backward.csv", "convergence_forward.csv"] {
        assert!(dir.path().join("out").join(name).exists(), "{name}");
    }
    let history = fs::read_to_string(dir.path().join("out/convergence_backward.csv")).unwrap();
    assert!(history.starts_with("step,t,sup_change,min,max\n"));
}

#[test]
fn flow_from_a_kink_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(
        "flow",
        "model.family = discounted_mechanical\ngrid.n = 128\ntime.dt = 5e-3\nflow.mode = calibrated_backward\nflow.x0 = 3.14159\nflow.horizon = 1\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("kink"));
}

#[test]
fn free_flow_writes_trajectory() {
    let dir = TempDir::new().unwrap();
    let out = run(
        "flow",
        "model.family = pendulum_dissipative\ngrid.n = 64\nflow.mode = free\nflow.x0 = 0\nflow.u0 = 0\nflow.p0 = 0\nflow.horizon = 2\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let body = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    assert!(body.starts_with("t,x1,u,p1,H\n"));
    // dH/dt = -H for the pendulum
    let rows = csv_rows(&dir.path().join("out/trajectory.csv"));
    let last = rows.last().unwrap();
    assert!((last[4] - 3.0 * (-2.0f64).exp()).abs() < 1e-6, "{last:?}");
}

#[test]
fn identical_configs_give_identical_csv() {
    let config = "model.family = pendulum_dissipative\ngrid.n = 64\ntime.dt = 5e-3\n";
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(run("solve", config, a.path()).status.code(), Some(0));
    let threaded = format!("{config}threads = 2\n");
    assert_eq!(run("solve", &threaded, b.path()).status.code(), Some(0));
    for name in ["u_minus.csv", "u_plus.csv", "residual.csv", "convergence_backward.csv"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn action_writes_requested_slices() {
    let dir = TempDir::new().unwrap();
    let out = run(
        "action",
        "model.family = quadratic_contact\ngrid.n = 64\ntime.dt = 5e-3\naction.x0 = 0.5\naction.u0 = 0\naction.times = 0.1, 0.3\n",
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let rows = csv_rows(&dir.path().join("out/action.csv"));
    assert_eq!(rows.len(), 128);
    assert!((rows[0][0] - 0.1).abs() < 1e-12 && (rows[64][0] - 0.3).abs() < 1e-12);
    // the slice is smallest at the base point
    let slice = &rows[64..];
    let (arg, _) = slice
        .iter()
        .map(|r| (r[1], r[2]))
        .fold((0.0, f64::INFINITY), |m, p| if p.1 < m.1 { p } else { m });
    assert!((arg - 0.5).abs() < 2.0 / 64.0, "argmin {arg}");
}

#[test]
fn admissible_finds_the_mechanical_level() {
    let dir = TempDir::new().unwrap();
    let out = run(
        "admissible",
        "model.family = discounted_mechanical\ngrid.n = 64\nadmissible.tol_a = 1e-2\nadmissible.curve_points = 3\n",
        dir.path(),
    );
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let a: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("a* = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((a + 1.0).abs() < 2e-2, "a* = {a}");
    let curve = csv_rows(&dir.path().join("out/c_curve.csv"));
    assert!(curve.windows(2).all(|w| w[0][0] < w[1][0]));
    assert!(fs::read_to_string(dir.path().join("out/c_curve.csv")).unwrap().starts_with("a,c\n"));
}

#[test]
fn aubry_writes_cells_and_classification() {
    let dir = TempDir::new().unwrap();
    let out = run("aubry", "model.family = quadratic_contact\ngrid.n = 64\ntime.dt = 5e-3\n", dir.path());
    let stdout = text(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(stdout.contains("classification: fixed points"), "{stdout}");
    let cells = fs::read_to_string(dir.path().join("out/cells.csv")).unwrap();
    assert!(cells.starts_with("x1,u,p1\n"));
    assert_eq!(cells.lines().count(), 65);
    assert!(dir.path().join("out/barrier.csv").exists());
}

#[test]
fn audit_passes_and_fails_with_property_code() {
    let dir = TempDir::new().unwrap();
    let ok = run("audit", "model.family = pendulum_dissipative\n", dir.path());
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok.stdout));
    // dH/du = cos x vanishes at x = pi/2
    let broken = run(
        "audit",
        "model.family = custom_coefficients\nmodel.kappa0 = 0\nmodel.kappa1 = 1\n",
        dir.path(),
    );
    assert_eq!(broken.status.code(), Some(3));
    assert!(text(&broken.stdout).contains("H3 moderate increase: FAIL"));
}
