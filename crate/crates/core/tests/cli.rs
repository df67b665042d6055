use std::process::{Command, Output};

fn recsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recsim"))
        .args(args)
        .env_remove("RECSIM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

const SMALL: [&str; 4] = ["--queries", "2000", "--replicas", "1"];

#[test]
fn simulate_prints_p95() {
    let mut args = vec!["simulate", "--model", "DLRM-RMC1", "--cpu", "skylake", "--batch", "25", "--sla", "medium"];
    args.extend(SMALL);
    let out = recsim(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!(v["p95"].as_f64().unwrap() <= 0.1);
    assert!(v["qps"].as_f64().unwrap() > 0.0);
}

#[test]
fn tune_prints_search_path() {
    let mut args = vec!["tune", "--model", "NCF", "--cpu", "skylake", "--accel", "default", "--sla", "low"];
    args.extend(SMALL);
    let out = recsim(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert!(!v["search_path"].as_array().unwrap().is_empty());
    assert!(v["batch_size"].as_u64().unwrap() >= 1);
}

#[test]
fn infeasible_target_exits_two() {
    let mut args = vec!["tune", "--model", "MT-WND", "--sla", "0.0001"];
    args.extend(SMALL);
    assert_eq!(recsim(&args).status.code(), Some(2));
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(recsim(&["tune", "--model", "Nope"]).status.code(), Some(1));
    assert_eq!(recsim(&["simulate", "--model", "NCF", "--batch", "0"]).status.code(), Some(1));
    assert_eq!(recsim(&["tune", "--model", "NCF", "--frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"version": 1, "model": "NCF", "typo": true}"#).unwrap();
    let out = recsim(&["tune", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo"));
}

#[test]
fn trace_gen_stats_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tsv");
    let p = path.to_str().unwrap();
    let gen = recsim(&["trace", "gen", "--lambda", "100", "--n", "500", "--seed", "3", "--out", p]);
    assert_eq!(gen.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("#recsim-trace v1 seed=3 lambda=100"));
    let stats = recsim(&["trace", "stats", p]);
    assert_eq!(stdout_json(&stats)["count"], 500);
    assert_eq!(recsim(&["trace", "validate", p]).status.code(), Some(0));
    std::fs::write(&path, "#recsim-trace v1 seed=3 lambda=100\n0.5\tnope\n").unwrap();
    assert_eq!(recsim(&["trace", "validate", p]).status.code(), Some(1));
}

#[test]
fn seed_env_overrides_config() {
    let args = ["simulate", "--model", "NCF", "--batch", "4", "--lambda", "2000", "--queries", "500"];
    let run = |seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_recsim"));
        c.args(args);
        match seed {
            Some(s) => c.env("RECSIM_SEED", s),
            None => c.env_remove("RECSIM_SEED"),
        };
        c.output().unwrap().stdout
    };
    assert_eq!(run(Some("5")), run(Some("5")));
    assert_ne!(run(Some("5")), run(Some("6")));
    assert_eq!(run(None), run(Some("7")));
    let mut c = Command::new(env!("CARGO_BIN_EXE_recsim"));
    let bad = c.args(args).env("RECSIM_SEED", "x").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn sweep_and_pareto_csv() {
    let mut args = vec!["sweep", "--model", "NCF", "--batches", "1,8,64", "--slas", "low,high"];
    args.extend(SMALL);
    let out = recsim(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("batch,threshold,sla_s,qps,p95_s"));
    assert_eq!(text.lines().count(), 7);

    args[0] = "pareto";
    let text = String::from_utf8(recsim(&args).stdout).unwrap();
    assert!(text.starts_with("sla_s,p95_s,qps,batch,threshold,is_pareto"));
    assert!(text.lines().skip(1).any(|l| l.ends_with(",true")));
}

#[test]
fn report_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut args = vec!["report", "--models", "NCF", "--accel", "default", "--out-dir", d];
    args.extend(SMALL);
    let out = recsim(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * 3);
    assert!(report.lines().nth(1).unwrap().starts_with("NCF,low,static,"));
    assert!(dir.path().join("pareto.csv").exists());
}

#[test]
fn zoo_listing() {
    let out = String::from_utf8(recsim(&["zoo", "list"]).stdout).unwrap();
    assert_eq!(out.lines().count(), 8);
    let show = recsim(&["zoo", "show", "skylake"]);
    assert_eq!(stdout_json(&show)["cores"], 40);
    assert_eq!(recsim(&["zoo", "show", "nope"]).status.code(), Some(1));
}
