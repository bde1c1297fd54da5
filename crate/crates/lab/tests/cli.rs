use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use czlab::bundle::Bundle;
use czlab::fieldio;
use serde_json::Value;

fn czlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_czlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CZLAB_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json_lines(text: &str) -> Vec<Value> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).unwrap()).collect()
}

const RUN: &str = r#"{"name": "small", "d": 1, "K": 5, "n": 2, "seed": 11,
    "corpus": [{"family": "spike", "support": 0.1, "count": 2}, {"family": "smooth"}],
    "checks": ["cz_reconstruction", "cuculescu_properties", "bad_annihilation"]}"#;

#[test]
fn run_writes_reports_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.json"), RUN).unwrap();
    let o = czlab(&["run", "run.json", "--out", "out", "--jobs", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reports = json_lines(&fs::read_to_string(dir.path().join("out/small/reports.jsonl")).unwrap());
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r["schema_version"] == 1 && r["pass"] == true));
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("run,check_id,part,reports,passed"));

    // Same seed, same bytes; another seed, another corpus.
    let again = czlab(&["run", "run.json", "--out", "again", "--jobs", "1"], dir.path());
    assert_eq!(code(&again), 0);
    let a = fs::read(dir.path().join("out/small/reports.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("again/small/reports.jsonl")).unwrap());
    czlab(&["run", "run.json", "--out", "other", "--seed", "12"], dir.path());
    assert_ne!(a, fs::read(dir.path().join("other/small/reports.jsonl")).unwrap());
}

#[test]
fn failing_checks_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // Too few levels for a decay fit: the check fails, the config is fine.
    let text = RUN.replace(r#""cz_reconstruction", "cuculescu_properties", "bad_annihilation""#, r#""pseudo_localization""#);
    fs::write(dir.path().join("run.json"), text).unwrap();
    let o = czlab(&["run", "run.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn configuration_and_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("deep.json"), RUN.replace(r#""d": 1, "K": 5"#, r#""d": 2, "K": 10"#)).unwrap();
    let o = czlab(&["run", "deep.json", "--out", "out"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("K·d = 20"));

    fs::write(dir.path().join("typo.json"), RUN.replace("\"seed\"", "\"sed\"")).unwrap();
    assert_eq!(code(&czlab(&["run", "typo.json"], dir.path())), 2);
    assert_eq!(code(&czlab(&["run", "missing.json"], dir.path())), 2);
    assert_eq!(code(&czlab(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&czlab(&["run"], dir.path())), 2);
    fs::write(dir.path().join("run.json"), RUN).unwrap();
    assert_eq!(code(&czlab(&["run", "run.json", "--jobs", "0"], dir.path())), 2);
}

const GEN: &str = r#"{"d": 1, "K": 6, "n": 2, "seed": 5, "count": 2,
    "generator": {"family": "spike", "support": 0.05}, "bundle_lambda": 1.25}"#;

#[test]
fn gen_then_check_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gen.json"), GEN).unwrap();
    let o = czlab(&["gen", "gen.json", "corpus"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let index = json_lines(&fs::read_to_string(dir.path().join("corpus/instances.jsonl")).unwrap());
    assert_eq!(index.len(), 2);
    let field = dir.path().join("corpus").join(index[0]["file"].as_str().unwrap());
    let bundle = dir.path().join("corpus").join(index[0]["bundle"].as_str().unwrap());

    // Regeneration is byte-identical.
    czlab(&["gen", "gen.json", "again"], dir.path());
    let name = bundle.file_name().unwrap();
    assert_eq!(fs::read(&bundle).unwrap(), fs::read(dir.path().join("again").join(name)).unwrap());

    let f = fieldio::read(&field).unwrap();
    let b = Bundle::read(&bundle).unwrap();
    assert_eq!(b.field("f").unwrap(), &f);

    let o = czlab(&["check", bundle.to_str().unwrap(), "cz_reconstruction"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reports = json_lines(&String::from_utf8_lossy(&o.stdout));
    assert!(reports.iter().any(|r| r["check_id"] == "bundle_consistency" && r["pass"] == true));
    assert!(reports.iter().any(|r| r["check_id"] == "cz_reconstruction"));

    let o = czlab(&["check", field.to_str().unwrap(), "bad_annihilation", "--out", "r.jsonl"], dir.path());
    assert_eq!(code(&o), 0);
    assert!(!json_lines(&fs::read_to_string(dir.path().join("r.jsonl")).unwrap()).is_empty());

    assert_eq!(code(&czlab(&["check", bundle.to_str().unwrap(), "no_such_check"], dir.path())), 2);
    fs::write(dir.path().join("junk.czb"), b"CZLB\x01\x00").unwrap();
    assert_eq!(code(&czlab(&["check", "junk.czb", "cz_reconstruction"], dir.path())), 2);
}

#[test]
fn oracle_agrees_on_scalar_fields() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"d": 1, "K": 6, "n": 1, "seed": 3,
        "generator": {"family": "diagonal", "profile": {"kind": "steps", "level": 4}}}"#;
    fs::write(dir.path().join("gen.json"), spec).unwrap();
    assert_eq!(code(&czlab(&["gen", "gen.json", "corpus"], dir.path())), 0);
    let index = json_lines(&fs::read_to_string(dir.path().join("corpus/instances.jsonl")).unwrap());
    let field = format!("corpus/{}", index[0]["file"].as_str().unwrap());
    for op in ["cond_exp:2", "ball_avg:1", "tk:3", "mkn:1:3", "square_function", "lp_norm:1.5", "weak_norm", "stopping_times:2.0"] {
        let o = czlab(&["oracle", &field, op], dir.path());
        assert_eq!(code(&o), 0, "{op}: {}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["op"], op);
    }
    assert_eq!(code(&czlab(&["oracle", &field, "nonsense"], dir.path())), 2);

    // Matrix-valued fields have no scalar oracle.
    fs::write(dir.path().join("gen2.json"), spec.replace(r#""n": 1"#, r#""n": 2"#)).unwrap();
    assert_eq!(code(&czlab(&["gen", "gen2.json", "corpus2"], dir.path())), 0);
    let index = json_lines(&fs::read_to_string(dir.path().join("corpus2/instances.jsonl")).unwrap());
    let field = format!("corpus2/{}", index[0]["file"].as_str().unwrap());
    assert_eq!(code(&czlab(&["oracle", &field, "tk:1"], dir.path())), 2);
}
