use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn curloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curloop")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = curloop(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Data rows of a provenance-headed CSV as maps from column name to cell.
fn csv_rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# curloop "));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect()
}

fn f(cell: &str) -> f64 {
    cell.parse().unwrap()
}

#[test]
fn example_preset_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ex");
    run_ok(&["sensitivity", "--preset", "text-image", "--out", out.to_str().unwrap()]);
    let v = json(&out.join("sensitivity.json"));
    let s = &v["summary"];
    assert!((s["rho_p"].as_f64().unwrap() - 0.70711).abs() < 1e-5);
    assert!((s["inner_product"].as_f64().unwrap() + 0.5).abs() < 1e-10);
    assert!((s["threshold"].as_f64().unwrap() - 0.997).abs() < 1e-3);
    assert_eq!(s["decisive"], Value::Bool(false));
    assert_eq!(v["schema_version"], 1);
    let comment = fs::read_to_string(out.join("blockwise.csv")).unwrap();
    assert!(comment.starts_with(&format!(
        "# curloop blockwise schema_version=1 config_hash={} seed=0",
        v["config_hash"].as_str().unwrap()
    )));
}

#[test]
fn reference_t_grid_signs() {
    let dir = tempfile::tempdir().unwrap();
    let ts: Vec<String> = (1..=20).map(|k| format!("{}", 0.05 * k as f64)).collect();
    let cfg = write_config(
        dir.path(),
        "grid.json",
        &format!(r#"{{"system": {{"kind": "gaussian", "t": 0.2, "lambda_cur": 0.4}}, "sweep": {{"t": [{}]}}}}"#, ts.join(",")),
    );
    let out = dir.path().join("grid");
    run_ok(&["sensitivity", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let rows = csv_rows(&out.join("sensitivity_grid.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| f(&r["rho_p"]) > 0.0 && f(&r["rho_q"]) > 0.0));
    assert!(f(&rows[0]["dJq_dlambda"]) > 0.0);
    assert!(f(&rows[19]["dJq_dlambda"]) < 0.0);
    let blocks = csv_rows(&out.join("blockwise.csv"));
    assert_eq!(blocks.len(), 12 * 21);
}

#[test]
fn decoupled_preset_has_no_cross_terms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dec");
    run_ok(&["sensitivity", "--preset", "decoupled", "--out", out.to_str().unwrap()]);
    let v = json(&out.join("sensitivity.json"));
    let r = &v["report"];
    let all_zero = |m: &Value| m.as_array().unwrap().iter().flat_map(|row| row.as_array().unwrap()).all(|x| x == 0.0);
    assert!(all_zero(&r["C_q"]));
    assert_eq!(r["dJq_dlambda"].as_f64().unwrap(), 0.0);
    assert_eq!(r["inner_product_q"].as_f64().unwrap(), 0.0);
    for row in csv_rows(&out.join("blockwise.csv")) {
        assert_eq!(f(&row["cross_pre"]), 0.0);
        assert_eq!(f(&row["cross_post"]), 0.0);
    }
}

#[test]
fn simulate_reference_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    run_ok(&["simulate", "--preset", "gaussian-ref", "--out", out.to_str().unwrap()]);
    let v = json(&out.join("summary.json"));
    assert_eq!(v["converged"], Value::Bool(true));
    assert!(v["converged_at"].as_u64().unwrap() < 100);
    assert!(v["estimate_error"].as_f64().unwrap() < 1e-6);
    assert!(v["measured_rate"].as_f64().unwrap() <= v["coupling_norm"].as_f64().unwrap() + 1e-3);
    let rows = csv_rows(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), 101);
    assert!(rows[0].contains_key("theta_24") && rows[0].contains_key("phi_24"));
}

#[test]
fn decoupled_simulation_converges_by_second_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    run_ok(&["simulate", "--preset", "decoupled", "--out", out.to_str().unwrap()]);
    let v = json(&out.join("summary.json"));
    assert_eq!(v["converged"], Value::Bool(true));
    assert!(v["converged_at"].as_u64().unwrap() <= 2);
}

#[test]
fn finite_mode_ci_shrinks_with_batch_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut widths = Vec::new();
    for n in [4, 64] {
        let cfg = write_config(
            dir.path(),
            &format!("n{n}.json"),
            &format!(
                r#"{{"system": {{"kind": "gaussian", "t": 0.2}}, "replicas": 40,
                    "sample_mode": {{"kind": "finite", "n": {n}, "allocation": "multinomial"}}}}"#
            ),
        );
        let out = dir.path().join(format!("n{n}"));
        run_ok(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        let rows = csv_rows(&out.join("trajectory.csv"));
        let last = &rows[100];
        widths.push((f(&last["j_p_ci"]), f(&last["j_q_ci"])));
        let v = json(&out.join("summary.json"));
        assert_eq!(v["replicas"], 40);
    }
    assert!(widths[0].0 > widths[1].0 && widths[0].1 > widths[1].1, "{widths:?}");
}

const SWEEP: &str = r#"{"system": {"kind": "gaussian", "t": 0.2}, "replicas": 30, "seed": 11,
    "sweep": {"t": [0.9, 0.2], "lambda": [0.45, 0.35], "n": [64]}}"#;

#[test]
fn sweep_local_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.json", SWEEP);
    let out = dir.path().join("sw");
    run_ok(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 2 * 2 * 4);
    assert!(rows.iter().all(|r| r["error"].is_empty()));
    let get = |t: &str, l: &str, q: &str, col: &str| {
        f(&rows.iter().find(|r| r["t"] == t && r["lambda"] == l && r["quantity"] == q).unwrap()[col])
    };
    // Sorted by t, then lambda.
    assert_eq!(rows[0]["t"], "0.2");
    assert_eq!(rows[0]["lambda"], "0.35");
    for q in ["J_p", "J_q"] {
        assert!(get("0.2", "0.45", q, "closed_form") > get("0.2", "0.35", q, "closed_form"));
    }
    assert!(get("0.9", "0.45", "J_q", "closed_form") < get("0.9", "0.35", "J_q", "closed_form"));
    for l in ["0.35", "0.45"] {
        assert!(get("0.2", l, "dJp_dlambda", "estimate") > 0.0);
        assert!(get("0.2", l, "dJq_dlambda", "estimate") > 0.0);
        assert!(get("0.9", l, "dJq_dlambda", "estimate") < 0.0);
    }
}

#[test]
fn sweep_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sweep.json", SWEEP);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_ok(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap(), "--workers", "1"]);
    run_ok(&["sweep", "--config", &cfg, "--out", b.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
}

#[test]
fn seed_flag_changes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    run_ok(&["simulate", "--preset", "decoupled", "--seed", "42", "--out", out.to_str().unwrap()]);
    let v = json(&out.join("summary.json"));
    assert_eq!(v["seed"], 42);
    let first = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(first.lines().next().unwrap().ends_with("seed=42"));
}

#[test]
fn empty_sweep_fails_before_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "e.json",
        r#"{"system": {"kind": "gaussian", "t": 0.2}, "sweep": {"lambda": [0.4], "n": [4]}}"#,
    );
    let out = dir.path().join("e");
    let o = curloop(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn invalid_mixture_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"system": {"kind": "gaussian", "t": 0.2,
            "theta_mix": {"lambda_real": 0.5, "lambda_synth": 0.2, "lambda_cur": 0.2, "cross_fraction": 1}}}"#,
    );
    let out = dir.path().join("bad");
    let o = curloop(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("0.9"));
    assert!(!out.exists());
}

#[test]
fn numerical_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let diverging = write_config(
        dir.path(),
        "div.json",
        r#"{"system": {"kind": "literal", "w1": [[1, 0], [0, 1]], "w2": [[3, 0], [0, 3]],
            "a": [1, 0], "g_p": [1, 0], "g_q": [0, 1], "lambda_cur": 0.5}}"#,
    );
    let o = curloop(&["simulate", "--config", &diverging, "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divergence"));
    let singular = write_config(
        dir.path(),
        "sing.json",
        r#"{"system": {"kind": "literal", "w1": [[1, 0], [0, 1]], "w2": [[1, 0], [0, 1]],
            "a": [1, 0], "g_p": [1, 0], "g_q": [0, 1], "lambda_cur": 0.5}}"#,
    );
    let o = curloop(&["sensitivity", "--config", &singular, "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_presets() {
    for p in ["text-image", "gaussian-ref", "kappa-tau"] {
        let o = run_ok(&["verify", "--preset", p]);
        let text = String::from_utf8_lossy(&o.stdout);
        assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    }
    assert_eq!(curloop(&["verify", "--preset", "nope"]).status.code(), Some(1));
}

#[test]
fn verify_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["verify", "--preset", "kappa-tau", "--out", dir.path().to_str().unwrap()]);
    let v = json(&dir.path().join("verify.json"));
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["checks"].as_array().unwrap().len(), 5);
}
