use std::path::Path;
use std::process::{Command, Output};

use cvbench::evm::PartialEVM;

fn cvbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const VACUUM_THREE: &str = r#"{
  "mode": "direct",
  "alpha": 0.0,
  "states": [
    {"phase": 2.0943951023931953, "mean_x": 0, "mean_p": 0, "var_x": 0.5, "var_p": 0.5, "cross_re": 0},
    {"phase": 4.1887902047863905, "mean_x": 0, "mean_p": 0, "var_x": 0.5, "var_p": 0.5, "cross_re": 0},
    {"phase": 6.283185307179586, "mean_x": 0, "mean_p": 0, "var_x": 0.5, "var_p": 0.5, "cross_re": 0}
  ]
}"#;

const SUB_VACUUM: &str = r#"{
  "mode": "direct",
  "alpha": 0.5,
  "states": [
    {"phase": 0, "mean_x": 0, "mean_p": 0, "var_x": 0.1, "var_p": 0.1, "cross_re": 0},
    {"phase": 3.141592653589793, "mean_x": 0, "mean_p": 0, "var_x": 0.1, "var_p": 0.1, "cross_re": 0}
  ]
}"#;

#[test]
fn classify_below_threshold_is_entangled() {
    let o = cvbench(&["classify", "--eta", "0.5", "--nbar", "0.2", "--n", "3", "--alpha", "0.01"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ENTANGLED"));
}

#[test]
fn classify_far_above_threshold_is_compatible() {
    let o = cvbench(&["classify", "--eta", "0.5", "--nbar", "5", "--n", "3", "--alpha", "0.01"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("COMPATIBLE"));
}

#[test]
fn classify_measure_and_prepare_is_compatible() {
    let o = cvbench(&["classify", "--gain", "0.8", "--n", "3", "--alpha", "0.3", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["status"], "COMPATIBLE");
}

#[test]
fn classify_malformed_file_fails_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", "{\n  \"mode\": \"direct\",\n  \"alpha\": ,\n}");
    let o = cvbench(&["classify", "--input", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn classify_missing_field_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.json",
        r#"{"mode":"direct","alpha":0.5,"states":[{"phase":0,"mean_x":0,"mean_p":0,"var_x":0.5}]}"#,
    );
    let o = cvbench(&["classify", "--input", &p]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("var_p"), "{}", stderr(&o));
}

#[test]
fn classify_sub_vacuum_file_is_unphysical() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.json", SUB_VACUUM);
    let o = cvbench(&["classify", "--input", &p]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("UNPHYSICAL data"));
    assert!(stdout(&o).starts_with("UNPHYSICAL"));
}

#[test]
fn ingest_vacuum_file_is_compatible() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.json", VACUUM_THREE);
    let out = dir.path().join("evm.json");
    let o = cvbench(&["ingest", &p, "--output", out.to_str().unwrap(), "--classify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("COMPATIBLE"));
    let evm = PartialEVM::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(evm.n_states(), 3);
}

#[test]
fn ingest_sub_vacuum_file_warns_and_is_unphysical() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.json", SUB_VACUUM);
    let o = cvbench(&["ingest", &p, "--classify"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("warning: UNPHYSICAL data: states[0]"));
    // stdout still carries the EVM document.
    assert!(PartialEVM::from_json(&stdout(&o)).is_ok());
}

#[test]
fn ingest_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "m.json", VACUUM_THREE);
    let o = cvbench(&["ingest", &p]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let evm = PartialEVM::from_json(&text).unwrap();
    let again = PartialEVM::from_json(&evm.to_json().unwrap()).unwrap();
    assert_eq!(again, evm);
    assert_eq!(evm.to_json().unwrap().trim(), text.trim());
}

#[test]
fn ingest_phase_covariant_matches_direct() {
    // Loss η = 0.5, n̄ = 0.4, α = 0.3: means √(2η)α(cos φ, sin φ),
    // variance 1/2 + (1−η)n̄, covariance the product of the means.
    let (eta, nbar, alpha) = (0.5f64, 0.4, 0.3);
    let var = 0.5 + (1.0 - eta) * nbar;
    let states: Vec<String> = (1..=3)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / 3.0;
            let (mx, mp) = ((2.0 * eta).sqrt() * alpha * phi.cos(), (2.0 * eta).sqrt() * alpha * phi.sin());
            format!(
                r#"{{"phase":{phi},"mean_x":{mx},"mean_p":{mp},"var_x":{var},"var_p":{var},"cross_re":{}}}"#,
                mx * mp
            )
        })
        .collect();
    let direct = format!(r#"{{"mode":"direct","alpha":{alpha},"states":[{}]}}"#, states.join(","));
    let pc = format!(
        r#"{{"mode":"phase_covariant","alpha":{alpha},"n_states":3,"states":[{}]}}"#,
        states[2]
    );
    let dir = tempfile::tempdir().unwrap();
    let a = cvbench(&["ingest", &write(dir.path(), "d.json", &direct)]);
    let b = cvbench(&["ingest", &write(dir.path(), "p.json", &pc)]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    let ea = PartialEVM::from_json(&stdout(&a)).unwrap();
    let eb = PartialEVM::from_json(&stdout(&b)).unwrap();
    let diff = (ea.base() - eb.base()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
    assert_eq!(ea.free_directions(), eb.free_directions());
}

#[test]
fn sweep_covariance_grid_is_exact_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = ["sweep", "--eta-range", "0:0.95:20", "--criteria", "covariance", "--out-dir", d];
    let o = cvbench(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = std::fs::read(dir.path().join("sweep.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("criterion,eta,nbar_threshold,excess_variance"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], "covariance");
        let eta: f64 = f[1].parse().unwrap();
        let t: f64 = f[2].parse().unwrap();
        let ev: f64 = f[3].parse().unwrap();
        assert!((t - eta / (1.0 - eta)).abs() < 1e-12);
        assert!((ev - (1.0 - eta) * t).abs() < 1e-12);
    }

    let o = cvbench(&args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("sweep.csv")).unwrap(), first);

    let log = std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["command"], "sweep");
    assert_eq!(records[0]["version"], env!("CARGO_PKG_VERSION"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json[0]["points"].as_array().unwrap().len(), 20);
}

#[test]
fn sweep_evm_tracks_covariance_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = cvbench(&[
        "sweep", "--etas", "0.25,0.5", "--criteria", "evm", "--n", "3", "--alpha", "0.01", "--out-dir", d,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let got: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    for (t, want) in got.iter().zip([1.0 / 3.0, 1.0]) {
        assert!((t - want).abs() / want < 0.02, "{t} vs {want}");
    }
}

#[test]
fn sweep_rejects_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = cvbench(&[
        "sweep", "--etas", "0.5", "--criteria", "covariance", "--out-dir", blocker.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(blocker.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn threshold_command() {
    let o = cvbench(&["threshold", "--eta", "0.75", "--criterion", "covariance"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nbar_threshold=3.000000"), "{}", stdout(&o));

    let o = cvbench(&["threshold", "--eta", "1.5"]);
    assert_eq!(o.status.code(), Some(1));

    let o = cvbench(&["threshold", "--eta", "0.5", "--precision", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn alpha_scan_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = cvbench(&[
        "alpha-scan", "--eta", "0.5", "--n", "2", "--alphas", "0.5,1.0", "--precision", "0.01", "--out-dir", d,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("N=2 best alpha="));
    let text = std::fs::read_to_string(dir.path().join("alpha_scan.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("evm_n2_alpha0.5,0.5,"));
}
