use std::fs;
use std::path::Path;
use std::process::Command;

fn nubound(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nubound")).args(args).output().unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s.trim()).unwrap()
}

fn write_sample(path: &Path, n: usize) {
    // deterministic, strongly dependent pair without ties
    let mut text = String::from("x,z\n");
    for i in 0..n {
        let x = (i as f64 * 0.7391).sin() * 3.0 + i as f64 * 1e-3;
        let z = 2.0 * x + (i as f64 * 1.37).cos() * 0.5;
        text.push_str(&format!("{x},{z}\n"));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn knnmi_prints_bits_and_nats() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    write_sample(&data, 60);
    let (ok, out, err) = nubound(&["knnmi", "--input", data.to_str().unwrap(), "--k", "3"]);
    assert!(ok, "{err}");
    let v = json(&out);
    let nats = v["nats"].as_f64().unwrap();
    assert!((v["bits"].as_f64().unwrap() - nats / std::f64::consts::LN_2).abs() < 1e-12);
    assert!(nats > 0.5);
}

#[test]
fn estimate_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let map = dir.path().join("map.txt");
    write_sample(&data, 40);
    let args = [
        "estimate",
        "--input",
        data.to_str().unwrap(),
        "--B",
        "300",
        "--seed",
        "4",
    ];
    let (ok, out, err) = nubound(&[&args[..], &["--dump-map", map.to_str().unwrap()]].concat());
    assert!(ok, "{err}");
    let v = json(&out);
    let lower = v["lower_nats"].as_f64().unwrap();
    let knn = v["knn_nats"].as_f64().unwrap();
    assert_eq!(v["composite_nats"].as_f64().unwrap(), lower.max(knn));
    assert!(lower <= v["upper_nats"].as_f64().unwrap());
    assert!(fs::read_to_string(&map).unwrap().lines().count() >= 40);

    let (ok, csv, _) = nubound(&[&args[..], &["--format", "csv"]].concat());
    assert!(ok);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("n,nu_hat,"));
    // same seed, same numbers
    let (_, again, _) = nubound(&args);
    assert_eq!(out, again);
}

#[test]
fn truth_closed_form_and_monte_carlo() {
    let (ok, out, _) = nubound(&["truth", "--model", "gaussian", "--beta", "1", "--sigma-eps2", "1"]);
    assert!(ok);
    let v = json(&out);
    assert!((v["mi_nats"].as_f64().unwrap() - 0.5 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(v["method"], "closed_form");

    let (ok, out, _) = nubound(&[
        "truth",
        "--model",
        "mixture",
        "--beta",
        "2.0",
        "--sigma-eps2",
        "0.5",
        "--M",
        "20000",
        "--seed",
        "3",
    ]);
    assert!(ok);
    let v = json(&out);
    assert_eq!(v["method"], "monte_carlo");
    assert!(v["stderr_bits"].as_f64().unwrap() > 0.0);

    let (ok, _, err) = nubound(&["truth", "--model", "cauchy"]);
    assert!(!ok);
    assert!(err.contains("unknown model"));
}

#[test]
fn simulate_writes_three_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    fs::write(
        &cfg,
        "model = gaussian\nn = 25\nreplications = 4\nB = 200\nbeta = 2\nsigma_eps2 = 1\npanels = 2\ntruth_draws = 10000\n",
    )
    .unwrap();
    let out = dir.path().join("results");
    let (ok, _, err) = nubound(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert!(ok, "{err}");
    for f in ["scenarios.csv", "panels.csv", "convergence.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(out.join("panels.csv")).unwrap().lines().count(), 3);
}

#[test]
fn capacity_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cap.cfg");
    fs::write(
        &cfg,
        "channel = linear:1,1\nmean = -1,1\nvariance = 0.01,4\nbudget = 200\ndraws = 1000\n",
    )
    .unwrap();
    let (ok, out, err) = nubound(&["capacity", "--config", cfg.to_str().unwrap()]);
    assert!(ok, "{err}");
    let v = json(&out);
    assert!((v["bound_nats"].as_f64().unwrap() - 0.5 * 5f64.ln()).abs() < 1e-3);

    fs::write(&cfg, "channel = saturating:0.01\nat = 0.5,0.001\n").unwrap();
    let (ok, out, _) = nubound(&["capacity", "--config", cfg.to_str().unwrap()]);
    assert!(ok);
    assert!(json(&out)["bound_nats"].as_f64().unwrap() > 0.0);

    fs::write(&cfg, "channel = warp-drive\n").unwrap();
    assert!(!nubound(&["capacity", "--config", cfg.to_str().unwrap()]).0);
}
