use std::path::Path;
use std::process::{Command, Output};

fn stablab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stablab"))
        .args(args)
        .env_remove("STABLAB_SEED")
        .output()
        .expect("binary runs")
}

fn write_dataset(dir: &Path) -> String {
    let mut text = String::from("lot,month,value\n");
    let offsets = [0.4, -0.3, 0.1, -0.5, 0.6, -0.2];
    let noise = [0.11, -0.07, 0.02, -0.13, 0.09, 0.04, -0.05];
    for (l, off) in offsets.iter().enumerate() {
        for (k, m) in [0.0, 3.0, 6.0, 9.0, 12.0, 18.0, 24.0].iter().enumerate() {
            let e = noise[(k + 2 * l) % noise.len()];
            text.push_str(&format!("L{l},{m},{:.4}\n", 100.0 + off - 0.15 * m + e));
        }
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let o = stablab(&["decide", "--data", &data, "--method", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown method"));
}

#[test]
fn unreadable_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "lot,month,value\nA,0,not-a-number\n").unwrap();
    let o = stablab(&["fit", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_writes_json_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = stablab(&["fit", "--data", &data, "--model", "ri", "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["model"], "ri");
    assert_eq!(fit["n"], 42);
    assert!(fit["sigma2_e"].as_f64().unwrap() > 0.0);

    let again = stablab(&["fit", "--data", &data, "--out", out_s]);
    assert_eq!(again.status.code(), Some(2));
    let forced = stablab(&["fit", "--data", &data, "--out", out_s, "--force"]);
    assert!(forced.status.success());
}

#[test]
fn decide_reports_support_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    for method in ["OLS", "FIXED", "CONTAIN", "SAT", "SAT_reduced", "SAT_AICc"] {
        let o = stablab(&["decide", "--data", &data, "--method", method, "--tstar", "36"]);
        assert!(o.status.success(), "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["method"], method);
        assert_eq!(v["t_star"], 36.0);
        assert_eq!(v["lots"].as_array().unwrap().len(), 6);
        assert!(v["support_at_t_star"].is_boolean());
    }
}

#[test]
fn predict_contain_and_sat_share_points() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let run = |ddf: &str| {
        let o = stablab(&["predict", "--data", &data, "--model", "ri", "--ddf", ddf, "--grid", "12,48"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o)
    };
    let (con, sat) = (run("contain"), run("sat"));
    let pred_col = |text: &str| -> Vec<String> {
        text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect()
    };
    assert_eq!(con.lines().next().unwrap(), "lot,month,kind,pred,se_pred,ddf,alpha,lcl,ucl");
    assert_eq!(pred_col(&con).len(), 12);
    assert_eq!(pred_col(&con), pred_col(&sat));
    // containment: 42 - rank([X Z]) = 42 - 7
    assert!(con.lines().skip(1).all(|l| l.split(',').nth(5).unwrap().parse::<f64>().unwrap() == 35.0));
}

#[test]
fn rebuild_reference_reproduces_engine() {
    let o = stablab(&["rebuild-satt", "--reference", "--lot", "G", "--month", "24"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let rebuilt: f64 = row[9].parse().unwrap();
        let engine: f64 = row[10].parse().unwrap();
        assert!((rebuilt - engine).abs() < 1e-6 * engine);
    }
    let cond: f64 = rows[0][9].parse().unwrap();
    assert!((cond - 0.843).abs() < 0.01);
}

#[test]
fn rebuild_needs_data_or_reference() {
    let o = stablab(&["rebuild-satt", "--lot", "G", "--month", "24"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_reproducible_and_seed_env_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(&cfg, r#"{"vcfrac_grid": [0.0, 0.5], "reps_boundary": 30}"#).unwrap();
    let run = |name: &str, jobs: &str, seed_env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_stablab"));
        cmd.args(["simulate", "--config", cfg.to_str().unwrap(), "--which", "table2", "--seed", "7", "--jobs", jobs])
            .arg("--out")
            .arg(&out)
            .env_remove("STABLAB_SEED");
        if let Some(s) = seed_env {
            cmd.env("STABLAB_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out.join("table2_boundary.csv")).unwrap()
    };
    let a = run("a", "1", None);
    let b = run("b", "3", None);
    assert_eq!(a, b);
    let c = run("c", "2", Some("8"));
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn simulate_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = stablab(&["simulate", "--config", cfg.to_str().unwrap(), "--which", "table2", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
