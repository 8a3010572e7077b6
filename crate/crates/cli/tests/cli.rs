use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn ecozoo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecozoo")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).expect("manifest.json written");
    serde_json::from_str(&text).unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ecozoo(&["simulate", "--config", "/no/such/file.toml", "--out", s(&tmp.path().join("o")), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("configs/simulate-reference.toml");
    let out = ecozoo(&["simulate", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_writes_valid_records() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("gen");
    let out = ecozoo(&["generate", "--config", s(&data("distributions/table4.toml")), "--out", s(&dir), "--seed", "4", "--count", "100"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let contexts = ecozoo::context::load_dataset(&dir.join("contexts.jsonl")).unwrap();
    assert_eq!(contexts.len(), 100);
    let dist = ecozoo::context::FeatureDistribution::load(&data("distributions/table4.toml")).unwrap();
    assert!(contexts.iter().all(|c| dist.contains(c)));
    let m = manifest(&dir);
    assert_eq!(m["subcommand"], "generate");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
}

#[test]
fn simulate_trace_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("configs/simulate-reference.toml");
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = ecozoo(&["simulate", "--config", s(&cfg), "--out", s(&dir), "--seed", "5", "--trace"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (std::fs::read(dir.join("trace.csv")).unwrap(), std::fs::read(dir.join("metrics.json")).unwrap())
    };
    let (a, b) = (run("a"), run("b"));
    assert!(!a.0.is_empty());
    assert_eq!(a, b);
    let m = manifest(&tmp.path().join("a"));
    assert!(m["coefficient_hash"].as_str().is_some_and(|h| h.len() == 64));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("configs/simulate-reference.toml");
    let dir = tmp.path().join("o");
    let args = ["simulate", "--config", s(&cfg), "--out", s(&dir), "--seed", "1"];
    assert!(ecozoo(&args).status.success());
    let again = ecozoo(&args);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(ecozoo(&forced).status.success());
}

#[test]
fn evaluate_report_does_not_depend_on_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("configs/reference-glide.toml");
    let run = |name: &str, workers: &str| {
        let dir = tmp.path().join(name);
        let out = ecozoo(&["evaluate", "--config", s(&cfg), "--out", s(&dir), "--workers", workers]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.join("report.json")).unwrap()
    };
    let one = run("w1", "1");
    assert_eq!(one, run("w3", "3"));
    let report: serde_json::Value = serde_json::from_slice(&one).unwrap();
    let rec = &report["intersections"][0];
    assert!(rec["emission_benefit_pct"].as_f64().unwrap() > 0.0);
    assert!(rec["throughput_change_pct"].as_f64().unwrap() >= 0.0);
    let hist = std::fs::read_to_string(tmp.path().join("w1/histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_low,bin_high,count"));
}

#[test]
fn bad_bin_width_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = data("configs/reference-glide.toml");
    let out = ecozoo(&["evaluate", "--config", s(&cfg), "--out", s(tmp.path()), "--bins", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "contexts = \"missing.jsonl\"\n").unwrap();
    let out = ecozoo(&["simulate", "--config", s(&cfg), "--out", s(&tmp.path().join("o")), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn signal_opt_and_calibrate_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let so = tmp.path().join("so");
    let out = ecozoo(&["signal-opt", "--config", s(&data("configs/signal-opt.toml")), "--out", s(&so), "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(ecozoo::context::load_dataset(&so.join("plans.jsonl")).unwrap().len(), 1);
    let audit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(so.join("audit.json")).unwrap()).unwrap();
    assert_eq!(audit[0]["certificate_holds"], true);

    let cfg = tmp.path().join("cal.toml");
    std::fs::write(
        &cfg,
        "[chains]\nchains = 2\nwarmup = 300\nsamples = 200\n\n[[data]]\nclass = \"car\"\nsynthetic = { theta = [12.0, 2.5, 1.2, 1.2, 1.8], sigma = 0.1, transitions = 400 }\n",
    )
    .unwrap();
    let cal = tmp.path().join("cal");
    let out = ecozoo(&["calibrate", "--config", s(&cfg), "--out", s(&cal), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(cal.join("calibration.json")).unwrap()).unwrap();
    let classes = report["classes"].as_array().unwrap();
    assert!(classes.iter().any(|c| c["class"] == "truck_bus" && c["defaults_used"] == true));
    assert!(cal.join("drivers.json").is_file());
}
