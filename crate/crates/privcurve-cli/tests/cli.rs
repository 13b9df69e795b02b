//! End-to-end tests of the binary, including the CLI acceptance criterion:
//! verify exits 0 on valid maps, nonzero on corrupt input, and curve output
//! is byte-stable.

use std::path::Path;
use std::process::{Command, Output};

use privcurve::rng::{random_gaussian_matrix, seeded_rng};

const BIN: &str = env!("CARGO_BIN_EXE_privcurve");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("PRIVCURVE_SHARDS")
        .output()
        .expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn write_diag234(dir: &Path) -> String {
    let path = dir.join("diag234.json");
    std::fs::write(
        &path,
        r#"{"m": 3, "n": 5, "entries": [[2,0,0,0,0],[0,3,0,0,0],[0,0,4,0,0]]}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

/// Criterion 9: verify exits 0 on the reference map and on random maps,
/// nonzero on a corrupted file; curve output is byte-stable.
#[test]
fn criterion_9_cli_contract() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let mut failures: Vec<String> = Vec::new();

    let out = run(&["verify", "--matrix", &matrix]);
    if exit_code(&out) != 0 {
        failures.push(format!("verify on reference map exited {}", exit_code(&out)));
    }

    // Ten random maps, all expected to verify clean.
    let mut stream = seeded_rng(909);
    use rand::Rng;
    for i in 0..10 {
        let m = stream.random_range(2..=8);
        let n = stream.random_range(2..=8);
        let a = random_gaussian_matrix(m, n, &mut stream);
        let map = privcurve::LinearMap::new(a, None).unwrap();
        let path = dir.path().join(format!("random{i}.json"));
        std::fs::write(&path, map.to_json_string()).unwrap();
        let out = run(&["verify", "--matrix", path.to_str().unwrap()]);
        if exit_code(&out) != 0 {
            failures.push(format!(
                "verify on random map {i} exited {}:\n{}",
                exit_code(&out),
                stdout(&out)
            ));
        }
    }

    // Corrupted file: nonzero exit with diagnostics.
    let corrupt = dir.path().join("corrupt.json");
    std::fs::write(&corrupt, "{this is not json").unwrap();
    let out = run(&["verify", "--matrix", corrupt.to_str().unwrap()]);
    if exit_code(&out) == 0 {
        failures.push("verify on corrupt file exited 0".into());
    }
    if stderr(&out).is_empty() {
        failures.push("verify on corrupt file printed no diagnostics".into());
    }

    // Byte-stable curve output across repeated runs.
    let args = ["curve", "--matrix", matrix.as_str(), "--rho-sweep", "0:35:36"];
    let first = run(&args);
    let second = run(&args);
    if exit_code(&first) != 0 {
        failures.push(format!("curve exited {}", exit_code(&first)));
    }
    if first.stdout != second.stdout {
        failures.push("curve output differs between runs".into());
    }

    let status = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!("[acceptance] criterion 9 (CLI contract): {status}");
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn curve_sweep_contains_breakpoints() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run(&["curve", "--matrix", &matrix, "--rho-sweep", "0:35:36"]);
    assert_eq!(exit_code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rho,pi"));
    let mut points = Vec::new();
    for line in lines {
        let mut split = line.split(',');
        let rho: f64 = split.next().unwrap().parse().unwrap();
        let pi: f64 = split.next().unwrap().parse().unwrap();
        points.push((rho, pi));
    }
    for (rho, pi) in [(0.0, 2.0), (4.0, 3.0), (13.0, 4.0), (29.0, 5.0)] {
        assert!(
            points
                .iter()
                .any(|&(r, p)| (r - rho).abs() < 1e-9 && (p - pi).abs() < 1e-9),
            "missing breakpoint ({rho}, {pi})"
        );
    }
}

#[test]
fn curve_on_zero_map_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.json");
    std::fs::write(&path, r#"{"m": 2, "n": 2, "entries": [[0,0],[0,0]]}"#).unwrap();
    let out = run(&[
        "curve",
        "--matrix",
        path.to_str().unwrap(),
        "--rho-sweep",
        "0:5:6",
    ]);
    assert_eq!(exit_code(&out), 0);
    for line in stdout(&out).lines().skip(1) {
        let pi: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(pi, 2.0);
    }
}

#[test]
fn negative_sweep_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run(&["curve", "--matrix", &matrix, "--rho-sweep", "-1:5:4"]);
    assert_eq!(exit_code(&out), 1);
    assert!(
        stderr(&out).contains("rho must be nonnegative"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn mechanism_json_matches_allocation_examples() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());

    let out = run(&["mechanism", "--matrix", &matrix, "--rho", "7"]);
    assert_eq!(exit_code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["allocation"], serde_json::json!([4.0, 3.0, 0.0]));
    assert_eq!(doc["mode"], "original");

    let out = run(&["mechanism", "--matrix", &matrix, "--rho", "0"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["d_a"], serde_json::json!([1.0, 1.0, 1.0]));

    let out = run(&["mechanism", "--matrix", &matrix, "--rho", "1e9"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["allocation"], serde_json::json!([4.0, 9.0, 16.0]));
    assert_eq!(doc["saturated"], true);

    let out = run(&["mechanism", "--matrix", &matrix, "--rho", "-3"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("rho must be nonnegative"));
}

#[test]
fn simulate_rejects_tiny_trials() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run(&["simulate", "--matrix", &matrix, "--rho", "7", "--trials", "1"]);
    assert_eq!(exit_code(&out), 1);
    assert!(
        stderr(&out).contains("trials must be >= 2"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn simulate_sweep_rows_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run(&[
        "simulate",
        "--matrix",
        &matrix,
        "--rho-sweep",
        "0:29:30",
        "--trials",
        "4000",
        "--format",
        "csv",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("rho,pi_closed,mmse_emp,mmse_se,dist_emp,dist_se,pass")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 30);
    let mut prev = f64::NEG_INFINITY;
    for row in rows {
        let pi: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(pi >= prev, "pi_closed not nondecreasing");
        prev = pi;
    }
}

#[test]
fn simulate_single_rho_report_is_close_to_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run(&[
        "simulate",
        "--matrix",
        &matrix,
        "--rho",
        "7",
        "--trials",
        "200000",
        "--seed",
        "42",
    ]);
    assert_eq!(exit_code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let mmse = doc["empirical_mmse"].as_f64().unwrap();
    assert!((mmse - 10.0 / 3.0).abs() < 0.01 * (10.0 / 3.0), "mmse {mmse}");
    let dist = doc["empirical_distortion"].as_f64().unwrap();
    assert!((dist - 7.0).abs() < 0.01 * 7.0, "distortion {dist}");
}

#[test]
fn shard_env_var_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run_with_env(
        &[
            "simulate",
            "--matrix",
            &matrix,
            "--rho",
            "7",
            "--trials",
            "1000",
        ],
        "PRIVCURVE_SHARDS",
        "3",
    );
    assert_eq!(exit_code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["shard_count"], 3);

    let out = run_with_env(
        &["simulate", "--matrix", &matrix, "--rho", "7"],
        "PRIVCURVE_SHARDS",
        "zero",
    );
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn sample_binary_has_magic_and_csv_has_columns() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let bin_path = dir.path().join("batch.bin");
    let out = run(&[
        "sample",
        "--matrix",
        &matrix,
        "--rho",
        "7",
        "--trials",
        "5",
        "--format",
        "bin",
        "--out",
        bin_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let bytes = std::fs::read(&bin_path).unwrap();
    assert_eq!(&bytes[..8], b"PRIVBAT1");
    // magic + 3 u64 dims + 5 rows x (5 + 3) doubles
    assert_eq!(bytes.len(), 8 + 24 + 5 * 8 * 8);

    let out = run(&[
        "sample", "--matrix", &matrix, "--rho", "7", "--trials", "2",
    ]);
    assert_eq!(exit_code(&out), 0);
    assert!(stdout(&out).starts_with("x_1,x_2,x_3,x_4,x_5,z_1,z_2,z_3"));
}

#[test]
fn sample_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let args = [
        "sample", "--matrix", &matrix, "--rho", "7", "--trials", "50", "--seed", "7",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(exit_code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn compare_reports_three_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out = run(&[
        "compare", "--matrix", &matrix, "--rho", "7", "--trials", "5000",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("name,dist_emp,dist_se,mmse_emp,mmse_se"));
    let names: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["isotropic", "attenuation", "optimal"]);
}

#[test]
fn missing_matrix_file_is_a_validation_error() {
    let out = run(&["curve", "--matrix", "/nonexistent/map.json"]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr(&out).contains("cannot read"));
}

#[test]
fn ragged_matrix_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ragged.json");
    std::fs::write(&path, r#"{"m": 2, "n": 2, "entries": [[1,0],[1]]}"#).unwrap();
    let out = run(&["curve", "--matrix", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
    assert!(
        stderr(&out).contains("ragged matrix"),
        "stderr: {}",
        stderr(&out)
    );
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let out = run(&["curve", "--bogus"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn output_file_and_stdout_agree() {
    let dir = tempfile::tempdir().unwrap();
    let matrix = write_diag234(dir.path());
    let out_path = dir.path().join("table.csv");
    let to_stdout = run(&["curve", "--matrix", &matrix]);
    let to_file = run(&[
        "curve",
        "--matrix",
        &matrix,
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&to_file), 0);
    assert_eq!(
        std::fs::read(&out_path).unwrap(),
        to_stdout.stdout,
        "file and stdout outputs differ"
    );
}
