use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn brw(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("experiment.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_brw"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("BRW_THREADS")
        .output()
        .unwrap()
}

fn result(dir: &Path, name: &str) -> Value {
    let text = std::fs::read_to_string(dir.join("out").join(name)).unwrap();
    serde_json::from_str::<Value>(&text).unwrap()["result"].clone()
}

fn csv_rows(dir: &Path, name: &str) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("out").join(name)).unwrap();
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

fn assert_success(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const SIMPLE3: &str = "[kernel]\nbuiltin = \"simple\"\ndimension = 3\n";

#[test]
fn green_at_tiny_lambda_matches_the_return_integral() {
    let dir = TempDir::new().unwrap();
    let out = brw(dir.path(), &["green"], &format!("lambdas = [1e-8]\n{SIMPLE3}"));
    assert_success(&out);
    let rows = csv_rows(dir.path(), "green.csv");
    assert_eq!(rows[0], ["lambda", "x", "value", "error", "divergent"]);
    assert_eq!(rows.len(), 2);
    let v: f64 = rows[1][2].parse().unwrap();
    assert!((v - 1.5164).abs() < 1e-3, "{v}");
    assert_eq!(rows[1][4], "0");
}

#[test]
fn divergent_green_prints_inf_with_flag() {
    let dir = TempDir::new().unwrap();
    let cfg = "lambdas = [0.0, 0.5]\ndisplacements = [[0, 0], [1, 0]]\n[kernel]\nbuiltin = \"simple\"\ndimension = 2\n";
    let out = brw(dir.path(), &["green"], cfg);
    assert_success(&out);
    let rows = csv_rows(dir.path(), "green.csv");
    assert_eq!(rows.len(), 5);
    for row in &rows[1..3] {
        assert_eq!(row[2], "inf");
        assert_eq!(row[4], "1");
    }
    for row in &rows[3..] {
        assert!(row[2].parse::<f64>().unwrap().is_finite());
        assert_eq!(row[4], "0");
    }
}

#[test]
fn malformed_configs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    for cfg in [
        "kernel = 3\n",
        "lambdas = [1.0]\n[kernel]\nbuiltin = \"simple\"\n",
        "lambdas = [1.0, 0.5]\n[kernel]\nbuiltin = \"simple\"\ndimension = 1\n",
        "beta = 1.0\n[kernel]\nbuiltin = \"simple\"\ndimension = 2\n[sources]\npoints = [[0, 0, 0]]\n",
        "lambdas = [1.0]\nunknown = 1\n[kernel]\nbuiltin = \"simple\"\ndimension = 1\n",
        "beta_sweep = { start = 2.0, stop = 1.0, count = 3 }\n[kernel]\nbuiltin = \"simple\"\ndimension = 1\n[sources]\npoints = [[0]]\n",
    ] {
        let out = brw(dir.path(), &["spectrum"], cfg);
        assert_eq!(out.status.code(), Some(2), "{cfg}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn spectrum_below_beta_c_is_empty() {
    let dir = TempDir::new().unwrap();
    let out = brw(dir.path(), &["spectrum"], &format!("beta = 0.5\n{SIMPLE3}[sources]\npoints = [[0, 0, 0]]\n"));
    assert_success(&out);
    let r = result(dir.path(), "spectrum.json");
    assert_eq!(r["eigenvalues"].as_array().unwrap().len(), 0);
    assert!((r["beta_c"].as_f64().unwrap() - 0.6595).abs() < 1e-3);
}

#[test]
fn simplex_spectrum_carries_the_repeated_root() {
    let dir = TempDir::new().unwrap();
    let out = brw(dir.path(), &["spectrum"], &format!("beta = 1.0\n{SIMPLE3}[sources]\nsimplex = 3\n"));
    assert_success(&out);
    let r = result(dir.path(), "spectrum.json");
    let eig = r["eigenvalues"].as_array().unwrap();
    assert_eq!(eig.len(), 2);
    assert_eq!(eig[0]["multiplicity"], 1);
    assert_eq!(eig[1]["multiplicity"], 2);

    let out = brw(dir.path(), &["simplex"], &format!("beta = 1.0\n{SIMPLE3}[sources]\nsimplex = 3\n"));
    assert_success(&out);
    let s = result(dir.path(), "simplex.json");
    let l0 = s["lambdas"]["lambda0"].as_f64().unwrap();
    let lr = s["lambdas"]["lambda_rep"].as_f64().unwrap();
    assert!((l0 - eig[0]["value"].as_f64().unwrap()).abs() < 1e-6 * l0);
    assert!((lr - eig[1]["value"].as_f64().unwrap()).abs() < 1e-6 * lr);
}

#[test]
fn sweep_counts_roots_on_both_sides_of_beta_c1() {
    let dir = TempDir::new().unwrap();
    let base = format!("{SIMPLE3}[sources]\nsimplex = 2\n");
    assert_success(&brw(dir.path(), &["critical"], &base));
    let c = result(dir.path(), "critical.json")["critical"].clone();
    let (bc, bc1) = (c["beta_c"].as_f64().unwrap(), c["beta_c1"].as_f64().unwrap());
    let cfg = format!(
        "beta_sweep = {{ start = {}, stop = {}, count = 6 }}\n{base}",
        bc * 1.05,
        bc1 * 1.95
    );
    assert_success(&brw(dir.path(), &["spectrum"], &cfg));
    let rows = csv_rows(dir.path(), "spectrum_sweep.csv");
    assert_eq!(rows[0], ["beta", "count", "lambda_0", "lambda_1", "multiplicity_0", "multiplicity_1"]);
    for row in &rows[1..] {
        let beta: f64 = row[0].parse().unwrap();
        let count: usize = row[1].parse().unwrap();
        assert_eq!(count, if beta < bc1 { 1 } else { 2 }, "beta = {beta}");
    }
}

#[test]
fn critical_intensities_follow_the_dimension() {
    let dir = TempDir::new().unwrap();
    assert_success(&brw(dir.path(), &["critical"], &format!("{SIMPLE3}[sources]\npoints = [[0, 0, 0]]\n")));
    let r = result(dir.path(), "critical.json");
    assert!((r["critical"]["beta_c"].as_f64().unwrap() - 0.6595).abs() < 1e-3);
    assert!(r["critical"]["beta_c1"].is_null());

    assert_success(&brw(dir.path(), &["critical"], &format!("{SIMPLE3}[sources]\nsimplex = 2\n")));
    let r = result(dir.path(), "critical.json");
    assert_eq!(r["beta_c_below_inverse_g0"], true);

    let cfg = "[kernel]\nbuiltin = \"simple\"\ndimension = 2\n[sources]\npoints = [[0, 0], [2, 1], [-1, 3]]\n";
    assert_success(&brw(dir.path(), &["critical"], cfg));
    let r = result(dir.path(), "critical.json");
    assert_eq!(r["critical"]["beta_c"].as_f64().unwrap(), 0.0);
    assert_eq!(r["g0_divergent"], true);
}

#[test]
fn gamma_curve_is_decreasing() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("lambdas = {{ start = 0.01, stop = 2.0, count = 5, log = true }}\n{SIMPLE3}[sources]\nsimplex = 2\n");
    assert_success(&brw(dir.path(), &["gamma-curve"], &cfg));
    let rows = csv_rows(dir.path(), "gamma_curve.csv");
    assert_eq!(rows[0], ["lambda", "gamma_0", "gamma_1"]);
    let g: Vec<Vec<f64>> = rows[1..].iter().map(|r| r.iter().map(|x| x.parse().unwrap()).collect()).collect();
    for w in g.windows(2) {
        assert!(w[1][1] < w[0][1] && w[1][2] < w[0][2]);
    }
}

const REFERENCE: &str = "beta = 1.3189297483220313\n[kernel]\nbuiltin = \"simple\"\ndimension = 3\n[sources]\npoints = [[0, 0, 0]]\n[oracle]\ntrials = 2000\nt_max = 14.0\nseed = 7\n";

#[test]
fn oracle_compare_agrees_on_the_reference_case() {
    let dir = TempDir::new().unwrap();
    assert_success(&brw(dir.path(), &["oracle-compare"], REFERENCE));
    let r = result(dir.path(), "oracle_compare.json");
    assert!(r["warning"].is_null(), "{}", r["warning"]);
    for flag in r["agreement"].as_object().unwrap().values() {
        assert_eq!(flag["agree"], true);
    }
    assert!((r["gamma_method"].as_f64().unwrap() - 0.4521).abs() < 1e-3);
}

#[test]
fn oracle_compare_flags_a_tiny_box() {
    let dir = TempDir::new().unwrap();
    let cfg = REFERENCE.replace("beta = 1.3189297483220313", "beta = 0.75").replace("[oracle]\n", "[oracle]\nradius = 3\n");
    let out = brw(dir.path(), &["oracle-compare"], &cfg);
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let r = result(dir.path(), "oracle_compare.json");
    assert!(r["warning"].is_string());
    assert_eq!(r["agreement"]["gamma_vs_truncated"]["agree"], false);
}

#[test]
fn oracle_compare_below_beta_c_shows_no_growth() {
    let dir = TempDir::new().unwrap();
    let cfg = REFERENCE.replace("beta = 1.3189297483220313", "beta = 0.4");
    assert_success(&brw(dir.path(), &["oracle-compare"], &cfg));
    let r = result(dir.path(), "oracle_compare.json");
    assert!(r["gamma_method"].is_null());
    assert_eq!(r["agreement"]["truncated_below_edge"], true);
    assert_eq!(r["agreement"]["evolution_decelerating"], true);
    assert_eq!(r["agreement"]["simulation_vs_evolution"]["agree"], true);
    assert!(r["warning"].is_null(), "{}", r["warning"]);
}

#[test]
fn reruns_write_identical_files() {
    let dir = TempDir::new().unwrap();
    let cfg = "beta = 0.9\n[kernel]\nbuiltin = \"heavy-tail\"\ndimension = 1\nalpha = 0.5\n[sources]\npoints = [[0], [3]]\n[oracle]\ntrials = 300\nt_max = 5.0\n";
    let mut seen = Vec::new();
    for _ in 0..2 {
        let out = brw(dir.path(), &["simulate", "--seed", "99", "--threads", "2"], cfg);
        assert_success(&out);
        let csv = std::fs::read(dir.path().join("out/simulation.csv")).unwrap();
        let json = std::fs::read(dir.path().join("out/simulation.json")).unwrap();
        seen.push((csv, json, out.stdout));
    }
    assert_eq!(seen[0], seen[1]);
    let r = result(dir.path(), "simulation.json");
    assert_eq!(r["metadata"]["seed"], 99);
    let rows = csv_rows(dir.path(), "simulation.csv");
    assert_eq!(rows[0], ["t", "mean", "variance", "trials_alive"]);
    assert_eq!(rows.len(), 12);
}
