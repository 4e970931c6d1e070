use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mmalora(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmalora")).args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = mmalora(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const TINY: &str = "seeds = [1]\n[maac]\nepisodes = 3\nslots_per_episode = 5\nbatch_size = 8\nembed_dim = 4\n\
                    critic_hidden = [4]\nactor_hidden = [4]\nexecution_slots = 2\n";

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["--seed", "7", "--out", s(&a), "generate", "--gws", "3", "--eds", "100"]);
    ok(&["--seed", "7", "--out", s(&b), "generate", "--gws", "3", "--eds", "100"]);
    for f in ["scenario.toml", "positions.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(a.join("positions.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3 + 100);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("positions.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 7);
    assert_eq!(meta["command"], "generate");
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_gateways_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mmalora(&["--out", s(tmp.path()), "generate", "--gws", "0", "--eds", "10"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_quota_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["--out", s(d), "generate", "--gws", "1", "--eds", "10"]);
    let scen = d.join("scenario.toml");
    let out = mmalora(&["--out", s(d), "match", "--scenario", s(&scen), "--channels", "2", "--quota", "3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "colour = 3\n").unwrap();
    let out = mmalora(&["--config", s(&cfg), "--out", s(tmp.path()), "generate", "--gws", "1", "--eds", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_simulate_and_match_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["--out", s(d), "generate", "--gws", "2", "--eds", "20"]);
    let scen = d.join("scenario.toml");
    ok(&["--out", s(d), "analyze", "--scenario", s(&scen)]);
    ok(&["--out", s(d), "simulate", "--scenario", s(&scen), "--packets", "150"]);
    ok(&["--out", s(d), "match", "--scenario", s(&scen)]);
    let analyze = fs::read_to_string(d.join("analyze.csv")).unwrap();
    assert!(analyze.starts_with("device,channel,sf,tp_dbm,pdr,ee_bits_per_joule"));
    assert_eq!(analyze.lines().count(), 21);
    assert_eq!(fs::read_to_string(d.join("analyze_gateways.csv")).unwrap().lines().count(), 41);
    assert_eq!(fs::read_to_string(d.join("simulate.csv")).unwrap().lines().count(), 21);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("match_assignment.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["details"]["two_sided_exchange_stable"], true);
}

#[test]
fn json_format_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["--out", s(d), "--format", "json", "generate", "--gws", "1", "--eds", "5"]);
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(d.join("positions.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);
}

#[test]
fn optimize_runs_stages_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = tiny_config(d);
    ok(&["--out", s(d), "generate", "--gws", "2", "--eds", "8"]);
    let scen = d.join("scenario.toml");
    ok(&["--config", &cfg, "--out", s(d), "optimize", "--scenario", s(&scen), "--sim-packets", "50"]);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("optimize_evaluation.csv.meta.json")).unwrap()).unwrap();
    let log = meta["details"]["stage_log"].as_array().unwrap();
    assert_eq!(log[0]["stage"], "matching");
    assert_eq!(log[1]["stage"], "allocation");
    assert!(log[0]["finished_s"].as_f64() <= log[1]["started_s"].as_f64());
    assert_eq!(fs::read_to_string(d.join("optimize_assignment.csv")).unwrap().lines().count(), 9);
    assert_eq!(fs::read_to_string(d.join("optimize_curve.csv")).unwrap().lines().count(), 4);
    let curve_meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("optimize_curve.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(curve_meta["details"]["hyperparameters"]["episodes"], 3);
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = tiny_config(d);
    ok(&["--out", s(d), "generate", "--gws", "2", "--eds", "8"]);
    let scen = d.join("scenario.toml");
    ok(&["--config", &cfg, "--out", s(d), "train", "--scenario", s(&scen)]);
    let ck = mmalora::maac::load_checkpoint(&d.join("train_checkpoint.json")).unwrap();
    assert_eq!(ck.groups.iter().map(|g| g.members.len()).sum::<usize>(), 8);
}

#[test]
fn compare_covers_every_cell_and_algorithm() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, TINY.replace("seeds = [1]", "seeds = [1, 2]")).unwrap();
    ok(&["--config", s(&cfg), "--out", s(d), "--workers", "1", "compare", "--gws", "1,2", "--eds", "8"]);
    let rows = fs::read_to_string(d.join("compare.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 4);
    for alg in ["mmalora", "adr", "ef-lora", "rcst"] {
        assert_eq!(rows.lines().filter(|l| l.contains(&format!(",{alg},"))).count(), 4, "{alg}");
    }
    assert_eq!(fs::read_to_string(d.join("compare_summary.csv")).unwrap().lines().count(), 1 + 2 * 4);
}

#[test]
fn validate_reports_each_sweep_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["--seed", "3", "--out", s(d), "validate", "--sweep", "gw", "--packets", "100"]);
    let summary = fs::read_to_string(d.join("validate_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(summary.lines().skip(1).all(|l| l.starts_with("gw,")));
}

#[test]
fn missing_scenario_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mmalora(&["--out", s(tmp.path()), "analyze"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario"));
}
