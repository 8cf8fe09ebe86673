use std::fs;
use std::process::Command;

fn rcmwalk(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_rcmwalk")).args(args).env("RCMWALK_THREADS", "2").output().unwrap()
}

#[test]
fn self_checks_pass() {
    for args in [&["walk", "check"][..], &["theory", "check"][..]] {
        let out = rcmwalk(args);
        assert!(out.status.success(), "{:?}", args);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    }
}

#[test]
fn scenery_dump_is_csv() {
    let out = rcmwalk(&["scenery", "dump", "--dim", "2", "--radius", "2", "--seed", "5", "--alpha", "1.5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,z");
    assert_eq!(lines.len(), 1 + 25);
    let z: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!(z >= 1.0);
}

#[test]
fn bad_input_gives_error_json() {
    let out = rcmwalk(&["estimate", "ondiag", "--grid", "4", "--alpha=-1"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "argument");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"experiment": "ondiag", "alpha": 0.5, "n_samples": 10, "scenery_seeds": [1], "output": "x"}"#).unwrap();
    let out = rcmwalk(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn oracle_prints_value_json() {
    let out = rcmwalk(&["oracle", "prob", "--alpha", "0.5", "--law", "capped-pareto", "--cap", "10", "--radius", "16", "--to", "1,0", "--t", "1"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = v["value"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1.0);
    assert!(v["absorbed_mass"].as_f64().unwrap() < 1e-4);
}

#[test]
fn run_writes_reproducible_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("c.json");
    let text = format!(
        r#"{{"experiment": "ondiag", "alpha": 0.5, "t_grid": {{"min_exp": 2, "max_exp": 5}}, "n_samples": 2000,
            "scenery_seeds": [1, 2], "output": {:?}}}"#,
        out.to_str().unwrap()
    );
    fs::write(&cfg, text).unwrap();
    let first = rcmwalk(&["run", cfg.to_str().unwrap()]);
    assert!(first.status.code().unwrap() <= 1, "{}", String::from_utf8_lossy(&first.stderr));
    let a = fs::read(out.join("ondiag_seed1.jsonl")).unwrap();
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("MANIFEST.json")).unwrap()).unwrap();
    for f in ["ondiag_seed1.jsonl", "ondiag_seed2.jsonl", "summary.json"] {
        assert!(manifest["files"][f].is_string(), "{f} not in manifest");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["pooled"]["fit"]["slope"].is_number());

    let second = Command::new(env!("CARGO_BIN_EXE_rcmwalk"))
        .args(["--threads", "1", "run", cfg.to_str().unwrap(), "--set", "threads=1"])
        .output()
        .unwrap();
    assert!(second.status.code().unwrap() <= 1);
    assert_eq!(a, fs::read(out.join("ondiag_seed1.jsonl")).unwrap());
}

#[test]
fn fit_reads_series_and_judges() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let mut text = String::new();
    for k in 1..6 {
        let t = (1u64 << k) as f64;
        text += &format!("{{\"t\":{t},\"estimate\":{},\"stderr\":0.0,\"n\":100,\"hits\":100,\"seed\":1}}\n", t.powf(-0.5));
    }
    fs::write(&path, text).unwrap();
    let out = rcmwalk(&["fit", path.to_str().unwrap(), "--theory", "-0.5", "--tolerance", "0.01"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["fit"]["slope"].as_f64().unwrap() + 0.5).abs() < 1e-12);
    assert_eq!(v["verdict"]["pass"], true);
    let out = rcmwalk(&["fit", path.to_str().unwrap(), "--theory", "-1.0", "--tolerance", "0.01"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn theory_table_rows() {
    let out = rcmwalk(&["theory", "table", "--point", "1,1,0.5", "--point", "1,2,3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("1,1,0.5,1.5,1.25,"));
}
