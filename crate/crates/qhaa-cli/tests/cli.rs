use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qhaa(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qhaa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Rows after the `# config:` line, header included.
fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(p).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    assert!(first.starts_with("# config: {"), "{first}");
    rest.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

const SMALL: &[&str] = &["--grid", "8", "--n-dns", "64", "--tau", "10", "--dt", "0.01"];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn embed_counts_variables() {
    let dir = tempfile::tempdir().unwrap();
    let o = qhaa(&["embed", "--order", "4"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&dir.path().join("embedding.json"));
    assert_eq!(doc["system"]["variables"].as_array().unwrap().len(), 8);
    assert_eq!(doc["config"]["homotopy"]["order"], 4);
    let mtx = fs::read_to_string(dir.path().join("embedding_A.mtx")).unwrap();
    let mut lines = mtx.lines();
    assert!(lines.next().unwrap().starts_with("%%MatrixMarket"));
    assert!(lines.next().unwrap().starts_with("% config: {"));

    let o = qhaa(&["embed", "--order", "1"], dir.path());
    assert_eq!(code(&o), 0);
    let doc = read_json(&dir.path().join("embedding.json"));
    assert_eq!(doc["system"]["variables"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[problem]\nviscosity = 0.1\n").unwrap();
    let o = qhaa(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert_eq!(error_json(&o)["error"]["kind"], "config");

    fs::write(&cfg, "[problem\n").unwrap();
    let o = qhaa(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[homotopy]\norder = 3\nh_hat = -0.3\n[problem]\nn_grid = 16\n").unwrap();
    let o = qhaa(&["embed", "--config", cfg.to_str().unwrap(), "--order", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&dir.path().join("embedding.json"));
    assert_eq!(doc["config"]["homotopy"]["order"], 2);
    assert_eq!(doc["config"]["homotopy"]["h_hat"], -0.3);
    assert_eq!(doc["config"]["problem"]["n_grid"], 16);
}

#[test]
fn bad_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["solve", "--tau", "0"][..],
        &["solve", "--n-dns", "100"],
        &["solve", "--grid", "12"],
        &["solve", "--nu", "-1"],
        &["solve", "--mode", "warp"],
        &["solve", "--bogus"],
    ] {
        let o = qhaa(args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}");
        assert_eq!(error_json(&o)["error"]["exit_code"], 2, "{args:?}");
    }
}

#[test]
fn quantum_flag_needs_quantum_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("q.toml");
    fs::write(&cfg, "[quantum]\nenabled = true\n").unwrap();
    let o = qhaa(&["solve", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn tmcqc2_writes_emulation_records() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small(&[
        "solve", "--mode", "tmcqc2", "--order", "2", "--shots", "500", "--seed", "3", "--epsilon2", "5e-4",
    ]);
    let o = qhaa(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["emulation.json", "shots.csv", "trajectory.csv", "trajectory_richardson.csv", "diagnostics.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let em = read_json(&dir.path().join("emulation.json"));
    assert_eq!(em["emulation"]["transcript"].as_array().unwrap().len(), 10);
    assert_eq!(em["config"]["quantum"]["enabled"], true);
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    assert_eq!(rows[0], ["step", "t", "node", "x", "u"]);
    assert_eq!(rows.len(), 1 + 11 * 8);
}

#[test]
fn oneshot_lcu_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "solve", "--mode", "oneshot-lcu", "--kind", "explicit-oneshot", "--order", "1", "--grid", "8", "--n-dns",
        "64", "--tau", "3", "--dt", "0.01",
    ];
    let o = qhaa(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("emulation.json").exists());
}

#[test]
fn embedded_and_sequential_agree_at_low_order() {
    let dir = tempfile::tempdir().unwrap();
    let mse = |mode: &str| {
        let d = dir.path().join(mode);
        let args = ["solve", "--mode", mode, "--order", "2", "--guess", "discrete-heat", "--source-mode", "coupled"];
        let o = qhaa(&with_small(&args), &d);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        read_json(&d.join("diagnostics.json"))["diagnostics"]["mse_vs_dns"].as_f64().unwrap()
    };
    let (a, b) = (mse("sequential"), mse("embedded"));
    assert!((a - b).abs() <= 1e-9 * a.max(1e-12), "{a} vs {b}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_small(&["solve", "--mode", "tmcqc2", "--order", "2", "--shots", "200", "--seed", "9"]);
    assert_eq!(code(&qhaa(&args, dir.path())), 0);
    let names = ["trajectory.csv", "emulation.json", "shots.csv", "diagnostics.json"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| fs::read(dir.path().join(n)).unwrap()).collect();
    assert_eq!(code(&qhaa(&args, dir.path())), 0);
    for (n, bytes) in names.iter().zip(&first) {
        assert_eq!(&fs::read(dir.path().join(n)).unwrap(), bytes, "{n}");
    }
}

#[test]
fn sweep_rows_match_single_solves() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let args = with_small(&["sweep", "--orders", "1,2,3", "--h-hats", "-0.5,-0.2", "--workers", "3"]);
    let o = qhaa(&args, &sweep);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&sweep.join("sweep.csv"));
    assert_eq!(rows[0], ["M", "h_hat", "mse", "gamma_max"]);
    assert_eq!(rows.len(), 1 + 6);
    assert_eq!((rows[1][0].as_str(), rows[1][1].as_str()), ("1", "-0.5"));
    assert_eq!((rows[6][0].as_str(), rows[6][1].as_str()), ("3", "-0.2"));

    let single = dir.path().join("single");
    let o = qhaa(&with_small(&["solve", "--order", "2", "--h-hat", "-0.2"]), &single);
    assert_eq!(code(&o), 0);
    let m = read_json(&single.join("diagnostics.json"))["diagnostics"]["mse_vs_dns"].as_f64().unwrap();
    let row = rows.iter().find(|r| r[0] == "2" && r[1] == "-0.2").unwrap();
    assert_eq!(row[2].parse::<f64>().unwrap(), m);
}

#[test]
fn dns_writes_fine_and_restricted() {
    let dir = tempfile::tempdir().unwrap();
    let o = qhaa(&with_small(&["dns"]), dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fine = fs::read_to_string(dir.path().join("dns_fine.csv")).unwrap();
    assert!(fine.starts_with("# config: {"));
    let rows = csv_rows(&dir.path().join("dns_restricted.csv"));
    assert_eq!(rows[0], ["step", "t", "node", "x", "u"]);
    assert_eq!((rows.len() - 1) % 8, 0);
    assert_eq!(rows[1][4], "1");
}

#[test]
fn out_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_qhaa"))
        .args(["embed", "--order", "1", "--grid", "8"])
        .env("QHAA_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(target.join("embedding.json").exists());
}

#[test]
fn diagnose_prints_json_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = qhaa(&with_small(&["diagnose", "--order", "3"]), &dir.path().join("unused"));
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["order"], 3);
    assert!(!dir.path().join("unused").exists());
}

#[test]
fn stability_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = qhaa(&["solve", "--mode", "embedded", "--order", "2", "--dt", "1", "--tau", "2"], dir.path());
    assert_eq!(code(&o), 3);
    assert_eq!(error_json(&o)["error"]["kind"], "stability");
}

#[test]
fn register_cap_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = qhaa(
        &["solve", "--mode", "tmcqc2", "--tau", "100000", "--grid", "512", "--n-dns", "512"],
        dir.path(),
    );
    assert_eq!(code(&o), 4);
    assert_eq!(error_json(&o)["error"]["kind"], "register-cap");
}

#[test]
fn divergence_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let o = qhaa(
        &["solve", "--order", "8", "--h-hat", "-2", "--tau", "200", "--n-dns", "64"],
        dir.path(),
    );
    assert_eq!(code(&o), 5);
    assert_eq!(error_json(&o)["error"]["kind"], "divergence");
}
