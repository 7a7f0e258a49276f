use std::path::Path;
use std::process::{Command, Output};

fn trunclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trunclab")).args(args).env_remove("TRUNCLAB_OUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let j = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|x| x.unwrap()[j].to_string()).collect()
}

#[test]
fn fit_on_the_short_decay_fixture_gives_the_alpha_table() {
    let o = trunclab(&["fit", "--fixture", "tv_decay_short", "--family", "power,exponential"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    // Ranked by AIC within each series, so power comes first.
    assert_eq!(&rows[0][0], "natural");
    assert_eq!(&rows[0][1], "power");
    let a_nat: f64 = rows[0][2].parse().unwrap();
    let a_code: f64 = rows[2][2].parse().unwrap();
    assert!((a_nat - 0.44).abs() < 0.02 && (a_code - 0.38).abs() < 0.02);
    let rmse: f64 = rows[0][4].parse().unwrap();
    assert!((rmse - 0.14).abs() < 0.01);
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let o = trunclab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(trunclab(&[]).status.code(), Some(2));
    assert_eq!(trunclab(&["fit"]).status.code(), Some(2));
}

#[test]
fn invalid_input_exits_3() {
    assert_eq!(trunclab(&["fit", "--fixture", "missing"]).status.code(), Some(3));
    assert_eq!(trunclab(&["alloc", "--budget=-1"]).status.code(), Some(3));
    assert_eq!(trunclab(&["sweep", "--grid-hi", "2048", "--prefix-len", "1025"]).status.code(), Some(3));
}

#[test]
fn failed_computation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.ndjson");
    let mut lines = String::new();
    for p in 0..3 {
        for w in [4, 8] {
            lines += &format!(
                "{{\"schema_version\":1,\"model\":\"m\",\"domain\":\"d\",\"protocol\":\"fresh\",\"prefix_id\":{p},\"prefix_len\":64,\"kind\":\"window_sweep\",\"w\":{w},\"tv\":0.{w},\"tool_version\":\"x\"}}\n"
            );
        }
    }
    std::fs::write(&log, lines).unwrap();
    let ok = trunclab(&["fit", "--log", log.to_str().unwrap(), "--family", "power"]);
    assert_eq!(ok.status.code(), Some(0));
    // Two grid points cannot carry a four-parameter law.
    let bad = trunclab(&["fit", "--log", log.to_str().unwrap(), "--family", "broken_power"]);
    assert_eq!(bad.status.code(), Some(1), "{}", String::from_utf8_lossy(&bad.stderr));
}

#[test]
fn simulate_ingest_fit_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let sim = trunclab(&[
        "simulate", "--alpha", "0.7", "--vocab", "4096", "--l-max", "65536", "--n-prefixes", "30", "--prefix-len", "1025",
        "--out", out,
    ]);
    assert_eq!(sim.status.code(), Some(0), "{}", String::from_utf8_lossy(&sim.stderr));
    let log = dir.path().join("simulate.ndjson");
    assert!(log.exists());
    let ing = trunclab(&["ingest", log.to_str().unwrap()]);
    assert_eq!(ing.status.code(), Some(0));
    assert_eq!(column(&stdout(&ing), "records"), vec!["240"]);
    let fit = trunclab(&["fit", "--log", log.to_str().unwrap(), "--family", "power", "--bootstrap", "50"]);
    assert_eq!(fit.status.code(), Some(0));
    let alpha: f64 = column(&stdout(&fit), "alpha")[0].parse().unwrap();
    assert!((alpha - 0.7).abs() < 0.1, "{alpha}");
    assert!(!column(&stdout(&fit), "ci95")[0].is_empty());
}

#[test]
fn ingest_aborts_when_too_many_lines_are_bad() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("bad.ndjson");
    std::fs::write(&log, "{\"schema_version\":1}\nnot json\n").unwrap();
    let o = trunclab(&["ingest", log.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let empty = dir.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(trunclab(&["ingest", empty.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn report_covers_every_decay_fixture() {
    let o = trunclab(&["report", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let fits = v["fits"].as_array().unwrap();
    for key in trunclab::fixtures::DECAY_FIXTURES {
        assert!(fits.iter().any(|f| f["fixture"] == key), "{key}");
    }
    assert_eq!(fits.len(), 13);
    assert_eq!(v["kl_vs_tv2"].as_array().unwrap().len(), 2);
    assert_eq!(v["tables"].as_array().unwrap().len(), 3);
    let md = stdout(&trunclab(&["report"]));
    assert!(md.contains("exponents_cross_model") && md.contains("| tv_decay_long | code |"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_trunclab"))
        .args(["window", "--eps", "0.1"])
        .env("TRUNCLAB_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let written = std::fs::read_to_string(dir.path().join("window.csv")).unwrap();
    assert_eq!(written, stdout(&o));
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn config_values_sit_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[source]\nalpha = 1.0\n\n[window]\neps = [0.5]\n");
    let from_cfg = stdout(&trunclab(&["--config", &cfg, "window"]));
    assert_eq!(column(&from_cfg, "eps"), vec!["0.5"]);
    let flagged = stdout(&trunclab(&["--config", &cfg, "window", "--eps", "0.25"]));
    assert_eq!(column(&flagged, "eps"), vec!["0.25"]);
    // The source table feeds the sensitivity constant: a faster decay needs a smaller window.
    let default_alpha = stdout(&trunclab(&["window", "--eps", "0.5"]));
    let w_cfg: f64 = column(&from_cfg, "raw")[0].parse().unwrap();
    let w_def: f64 = column(&default_alpha, "raw")[0].parse().unwrap();
    assert!(w_cfg < w_def, "{w_cfg} vs {w_def}");
}

#[test]
fn bad_configs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_key = write_config(dir.path(), "[window]\nepsilon = 3\n");
    assert_eq!(trunclab(&["--config", &unknown_key, "window"]).status.code(), Some(3));
    let unknown_section = write_config(dir.path(), "[plot]\nx = 1\n");
    assert_eq!(trunclab(&["--config", &unknown_section, "window"]).status.code(), Some(3));
    let wrong_type = write_config(dir.path(), "[window]\neps = \"small\"\n");
    assert_eq!(trunclab(&["--config", &wrong_type, "window"]).status.code(), Some(3));
    let missing = dir.path().join("none.toml");
    assert_eq!(trunclab(&["--config", missing.to_str().unwrap(), "window"]).status.code(), Some(3));
}

#[test]
fn runs_are_deterministic_given_seeds() {
    let args = ["policy", "--vocab", "16", "--l-max", "256", "--n-prefixes", "10", "--prefix-len", "257", "--budget-hi", "64", "--seed", "3"];
    let a = trunclab(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&trunclab(&args)));
}
