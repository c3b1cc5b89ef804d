use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_infucb"));
    c.env_remove("INFUCB_OUT_DIR");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/fixtures").join(name)
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

const TWO_ALGOS: &str = r#"
trials = 3
master_seed = 5
workers = 1

[instance.two_spike]
n = 24
m = 3
mu0 = 0.0
eps = 1.0
kind = "gaussian"
seed = 2

[[run]]
algorithm = "infinite-ucb"
objective = "fdr-tpr"
mu0 = 0.0
k = [1, 2]
horizon = 1500

[[run]]
algorithm = "uniform-bh"
objective = "fdr-tpr"
mu0 = 0.0
k = [1, 2]
horizon = 1500
"#;

fn write_spec(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("spec.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn two_algorithms_three_trials_give_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), TWO_ALGOS);
    let out = dir.path().join("out");
    let o = run(bin().arg("simulate").arg(&spec).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trials = fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 6);
    assert!(out.join("series_infinite-ucb-1_accepted_fdr.csv").exists());
}

#[test]
fn fixed_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), TWO_ALGOS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "2")] {
        let o = run(bin().arg("simulate").arg(&spec).args(["--seed", "99", "--workers", workers]).arg("--out").arg(out));
        assert!(o.status.success());
    }
    let mut names: Vec<String> =
        fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert!(names.len() > 5);
    for name in names.iter().filter(|n| *n != "timing.csv") {
        assert_eq!(fs::read_to_string(a.join(name)).unwrap(), fs::read_to_string(b.join(name)).unwrap(), "{name}");
    }
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 99"));
}

#[test]
fn missing_threshold_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &TWO_ALGOS.replace("mu0 = 0.0\nk", "k"));
    let out = dir.path().join("out");
    let o = run(bin().arg("simulate").arg(&spec).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mu0"));
    assert!(!out.exists());
}

#[test]
fn unknown_run_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &TWO_ALGOS.replace("horizon = 1500\n", "horizon = 1500\nhorizn = 3\n"));
    let o = run(bin().arg("simulate").arg(&spec).arg("--out").arg(dir.path().join("o")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &TWO_ALGOS.replace("trials = 3", "trials = 1"));
    let env_out = dir.path().join("from-env");
    let o = run(bin().arg("simulate").arg(&spec).env("INFUCB_OUT_DIR", &env_out));
    assert!(o.status.success());
    assert!(env_out.join("manifest.json").exists());
}

#[test]
fn replay_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(bin().arg("simulate").arg(fixture("campaign_small.toml")).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = out.join("manifest.json");
    assert!(run(bin().arg("replay").arg(&manifest)).status.success());

    let text = fs::read_to_string(&manifest).unwrap();
    let key = "\"trace_sha256\": \"";
    let at = text.find(key).unwrap() + key.len();
    let flipped = if &text[at..at + 1] == "0" { "1" } else { "0" };
    let tampered = format!("{}{}{}", &text[..at], flipped, &text[at + 1..]);
    fs::write(&manifest, tampered).unwrap();
    assert_eq!(run(bin().arg("replay").arg(&manifest)).status.code(), Some(1));
}

#[test]
fn verify_exit_codes() {
    let o = run(bin().arg("verify"));
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("4\t2\t2\t5/6\t5/6\t")));
    assert_eq!(run(bin().args(["verify", "--max-m", "6", "--inject-corruption"])).status.code(), Some(1));
    let o = run(bin().args(["verify", "--max-m", "15"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("enumeration"));
}

#[test]
fn hardness_report_minimizers_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.json");
    let o = run(bin().args(["hardness", "--n", "40", "--m", "6", "--delta", "0.05", "--out"]).arg(&path));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["format"], "infucb-hardness");
    let m = report["m_thr"].as_u64().unwrap();
    assert_eq!(m, 6);
    let mins = report["threshold_min"].as_array().unwrap();
    assert_eq!(mins.len(), 6);
    for row in mins {
        let k = row["k"].as_u64().unwrap();
        for key in ["j_fdr", "j_fdr_tilde", "j_fwer"] {
            let j = row[key].as_u64().unwrap();
            assert!(k <= j && j <= m, "{key}={j} k={k}");
        }
    }
    let j = report["h_best_argmin"].as_u64().unwrap();
    assert!((1..=6).contains(&j));
}

#[test]
fn hardness_needs_eps_or_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.json");
    let o = run(bin().args(["ingest", "captions"]).arg(fixture("captions_small.csv")).arg("--out").arg(&inst));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(bin().arg("hardness").arg("--instance").arg(&inst));
    assert_eq!(o.status.code(), Some(2));
    let o = run(bin().arg("hardness").arg("--instance").arg(&inst).args(["--eps", "0.1"]));
    assert!(o.status.success());
}

#[test]
fn ingest_screens_writes_instance_and_mixture() {
    let dir = tempfile::tempdir().unwrap();
    let (inst, mix) = (dir.path().join("i.json"), dir.path().join("m.json"));
    let o = run(bin()
        .args(["ingest", "screens"])
        .arg(fixture("screens_small.csv"))
        .arg("--out")
        .arg(&inst)
        .arg("--mixture-out")
        .arg(&mix)
        .args(["--grid-step", "0.1", "--iterations", "200", "--arms", "25"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let loaded = infucb::BanditInstance::load(&inst).unwrap();
    assert_eq!(loaded.n_arms(), 25);
    assert_eq!(loaded.threshold_mu0, Some(0.0));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&mix).unwrap()).unwrap();
    assert_eq!(m["grid"].as_array().unwrap().len(), 81);
}

#[test]
fn malformed_captions_fail() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,pos,total\nc1,2,0\n").unwrap();
    let o = run(bin().args(["ingest", "captions"]).arg(&bad).arg("--out").arg(dir.path().join("x.json")));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for p in [&a, &b] {
        let o = run(bin().args(["generate", "--n", "30", "--m", "4", "--seed", "8", "--out"]).arg(p));
        assert!(o.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn help_lists_flags() {
    let o = run(bin().args(["simulate", "--help"]));
    let text = String::from_utf8(o.stdout).unwrap();
    for flag in ["--out", "--seed", "--workers", "--trials", "--traces"] {
        assert!(text.contains(flag), "{flag}");
    }
    assert_eq!(run(bin().arg("frobnicate")).status.code(), Some(2));
}
