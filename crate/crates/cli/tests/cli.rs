use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use interference_core::harness::{preset, BenchReport, ScenarioConfig, PRESET_NAMES, SEED_ENV};
use interference_core::io::load_dataset;
use interference_core::EffectEstimate;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_interference-lab"));
    c.env_remove(SEED_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_scenario(n_eligible: usize, replicates: usize) -> ScenarioConfig {
    let mut s = preset("upward_bias").unwrap();
    s.sim.graph.n_eligible = n_eligible;
    s.sim.graph.n_ineligible = 20;
    s.sim.graph.n_connected = 60;
    s.sim.n_periods = 8;
    s.sim.rollout.stage_boundaries = vec![5];
    s.sim.pre_period_end = Some(4);
    s.replicates = replicates;
    s.estimators.bootstrap_replicates = 20;
    s
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn simulate_small(dir: &Path, n_eligible: usize) -> PathBuf {
    let cfg = dir.join("sim.json");
    write_json(&cfg, &small_scenario(n_eligible, 1).sim);
    let out = dir.join("data");
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 80);
    let d = load_dataset(&data).unwrap();
    assert_eq!(d.n_units(), 80);
    assert_eq!(d.n_periods(), 8);
    assert!(d.graph.is_some());
}

#[test]
fn estimate_writes_an_estimate_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 80);
    let cfg = dir.path().join("est.json");
    fs::write(&cfg, r#"{"seed": 3, "bootstrap_replicates": 20}"#).unwrap();
    for method in ["basic", "network", "cmp"] {
        let out = dir.path().join(format!("{method}.json"));
        let o = run(&["estimate", "--data", p(&data), "--method", method, "--config", p(&cfg), "--out", p(&out)]);
        assert_eq!(o.status.code(), Some(0), "{method}: {}", String::from_utf8_lossy(&o.stderr));
        let e: EffectEstimate = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert!(e.point.is_finite() && e.ci_low <= e.ci_high);
    }
}

#[test]
fn unknown_flag_exits_1() {
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["estimate", "--method", "magic"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 80);
    let t = fs::read_to_string(data.join("treatments.csv")).unwrap();
    let broken = t.replacen(",1", ",7", 1);
    assert_ne!(t, broken);
    fs::write(data.join("treatments.csv"), broken).unwrap();
    let out = dir.path().join("e.json");
    let o = run(&["estimate", "--data", p(&data), "--method", "basic", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\"graph\": 3}").unwrap();
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]).status.code(), Some(1));
    assert_eq!(run(&["report", "--in", p(&dir.path().join("missing.json"))]).status.code(), Some(1));
}

#[test]
fn failed_computation_exits_2() {
    // Ten subpopulations need at least twenty units.
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_small(dir.path(), 12);
    let out = dir.path().join("e.json");
    let o = run(&["estimate", "--data", p(&data), "--method", "cmp", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn seed_variable_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    let mut sim = small_scenario(80, 1).sim;
    write_json(&cfg, &sim);
    let with_env = |out: &Path, seed: &str| {
        let o = bin().env(SEED_ENV, seed).args(["simulate", "--config", p(&cfg), "--out", p(out)]).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        load_dataset(out).unwrap()
    };
    let a = with_env(&dir.path().join("a"), "77");
    sim.seed = 77;
    let cfg77 = dir.path().join("sim77.json");
    write_json(&cfg77, &sim);
    let b_dir = dir.path().join("b");
    assert_eq!(run(&["simulate", "--config", p(&cfg77), "--out", p(&b_dir)]).status.code(), Some(0));
    assert_eq!(a, load_dataset(&b_dir).unwrap());
    assert_ne!(a, with_env(&dir.path().join("c"), "78"));

    let o = bin().env(SEED_ENV, "not-a-number").args(["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("d"))]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    let mut other = small_scenario(60, 3);
    other.name = "second".into();
    fs::write(
        &cfg,
        serde_json::json!({ "scenarios": [small_scenario(60, 3), other] }).to_string(),
    )
    .unwrap();
    let out = dir.path().join("report.json");
    let o = run(&["bench", "--config", p(&cfg), "--out", p(&out), "--jobs", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: BenchReport = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    report.check().unwrap();
    assert_eq!(report.scenarios.len(), 2);
    assert_eq!(report.scenarios[0].replicates.len(), 3);

    let md = run(&["report", "--in", p(&out)]);
    assert_eq!(md.status.code(), Some(0));
    let text = String::from_utf8(md.stdout).unwrap();
    assert!(text.starts_with("# Treatment effect comparison"));
    assert!(text.contains("## upward_bias") && text.contains("## second"));
    assert!(text.contains("| Method | Estimate | Sig. | Bias-vs-truth | Expected-bias match |"));

    let json_out = dir.path().join("copy.json");
    assert_eq!(run(&["report", "--in", p(&out), "--format", "json", "--out", p(&json_out)]).status.code(), Some(0));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&json_out).unwrap());
}

#[test]
fn shipped_presets_match_the_built_in_definitions() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets");
    for name in PRESET_NAMES {
        let text = fs::read_to_string(root.join(format!("{name}.json"))).unwrap();
        let parsed: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, preset(name).unwrap(), "{name}");
    }
}
