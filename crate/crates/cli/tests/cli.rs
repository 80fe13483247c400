use std::path::Path;
use std::process::{Command, Output};

use regex::Regex;

const SUBCOMMANDS: &[&str] = &[
    "simgen",
    "ingest",
    "extract-keyframes",
    "embed",
    "train-dynamics",
    "select",
    "prompt",
    "predict",
    "rollout",
    "bench",
    "ablate",
    "sweep-k",
    "report",
];

fn xicm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xicm"))
        .current_dir(dir)
        .args(args)
        .env_remove("XICM_K")
        .env_remove("XICM_LLM_API_KEY")
        .env_remove("XICM_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = xicm(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).expect("structured error line");
    serde_json::from_str(line).unwrap()
}

/// Small dataset shared by the slower tests.
fn small_dataset(dir: &Path) {
    ok(dir, &["-q", "simgen", "--seed", "7", "--episodes", "4", "--image-size", "16", "--out", "data"]);
}

#[test]
fn help_documents_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let option = Regex::new(r"^\s+(-\w, )?--[a-z-]+").unwrap();
    let documented = Regex::new(r"^\s+(-\w, )?--[a-z-]+( <[A-Z_]+>)?\s{2,}\S").unwrap();
    for sub in SUBCOMMANDS {
        let help = ok(dir.path(), &[sub, "--help"]);
        assert!(help.contains("Usage: xicm"), "{sub}");
        for line in help.lines().filter(|l| option.is_match(l)) {
            assert!(documented.is_match(line), "{sub}: undocumented `{line}`");
        }
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = xicm(dir.path(), &["bench", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_line(&out)["kind"], "usage");
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
    assert_eq!(xicm(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(xicm(dir.path(), &[]).status.code(), Some(2));
    let bad_value = xicm(dir.path(), &["--print-config", "bench", "--k", "many"]);
    assert_eq!(bad_value.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_one_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = xicm(dir.path(), &["ingest", "--dataset", "missing"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_line(&out);
    assert_eq!(err["kind"], "dataset");
    assert!(err["message"].as_str().unwrap().contains("manifest"));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
}

#[test]
fn config_precedence_is_flag_env_file_default() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.conf"), "k=4\nbench.runs=5\ngateway.timeout=30\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xicm"))
        .current_dir(dir.path())
        .args(["--config", "x.conf", "--print-config", "bench", "--k", "9"])
        .env("XICM_BENCH_RUNS", "6")
        .env("XICM_K", "2")
        .env("XICM_LLM_API_KEY", "sk-secret")
        .output()
        .unwrap();
    assert!(out.status.success());
    let dump = String::from_utf8(out.stdout).unwrap();
    assert!(dump.contains("k = 9 (flag)"), "{dump}");
    assert!(dump.contains("bench.runs = 6 (env)"));
    assert!(dump.contains("gateway.timeout = 30 (file)"));
    assert!(dump.contains("dataset = data (default)"));
    assert!(dump.contains("gateway.api_key = <redacted> (env)"));
    assert!(!dump.contains("sk-secret"));
}

#[test]
fn prompt_dry_run_prints_the_prompt() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let text = ok(
        dir.path(),
        &["-q", "prompt", "--query", "close the lid", "--k", "2", "--dry-run", "--mode", "vis_in+lang"],
    );
    assert_eq!(text.matches("Task: close the lid").count(), 3, "{text}");
    assert!(text.ends_with("Actions:\n"));
    let unknown = ok(dir.path(), &["-q", "prompt", "--query", "juggle three balls", "--k", "1", "--dry-run", "--mode", "lang"]);
    assert!(unknown.contains("Task: juggle three balls\nObjects: (no objects)\nActions:\n"));
}

#[test]
fn keyframes_select_and_rollout() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let lines = ok(dir.path(), &["-q", "extract-keyframes", "--out", "-"]);
    assert_eq!(lines.lines().count(), 32);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(!first["timesteps"].as_array().unwrap().is_empty());

    let ranked = ok(dir.path(), &["-q", "select", "--task", "push_lever", "--k", "3", "--mode", "vis_in"]);
    assert_eq!(ranked.lines().count(), 3);

    let out = ok(dir.path(), &["-q", "rollout", "--task", "push_lever", "--backend", "scripted", "--mode", "vis_in"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["result"]["success"], true);

    let prose = ok(dir.path(), &["-q", "rollout", "--task", "push_lever", "--backend", "prose", "--mode", "vis_in"]);
    let v: serde_json::Value = serde_json::from_str(&prose).unwrap();
    assert_eq!(v["result"]["failure_reason"], "parse_failure");
}

#[test]
fn predict_reports_typed_gateway_errors() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let out = xicm(
        dir.path(),
        &[
            "-q", "predict", "--task", "push_lever", "--mode", "vis_in", "--backend", "http", "--endpoint",
            "http://127.0.0.1:9/v1", "--max-retries", "0", "--timeout", "2",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_line(&out)["kind"], "gateway");
    let echo = ok(dir.path(), &["-q", "predict", "--task", "push_lever", "--mode", "vis_in", "--k", "4"]);
    let v: serde_json::Value = serde_json::from_str(&echo).unwrap();
    assert!(!v["actions"].as_array().unwrap().is_empty());
}

fn pipeline_script(dir: &Path) -> Vec<u8> {
    ok(dir, &["-q", "simgen", "--seed", "7", "--episodes", "5", "--out", "data"]);
    ok(dir, &["-q", "embed", "--out", "features.bin"]);
    ok(
        dir,
        &["-q", "--seed", "7", "train-dynamics", "--features", "features.bin", "--out", "predictor.json", "--pool-out", "pool.bin", "--epochs", "40"],
    );
    ok(
        dir,
        &[
            "-q", "--seed", "7", "bench", "--backend", "scripted", "--predictor", "predictor.json", "--features", "pool.bin",
            "--tasks", "all", "--runs", "3", "--rollouts", "4", "--out", "reports",
        ],
    );
    std::fs::read(dir.join("reports/report.json")).unwrap()
}

#[test]
fn full_pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline_script(a.path());
    let second = pipeline_script(b.path());
    assert_eq!(first, second);
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["overall"]["mean"], 1.0);
    for name in ["report.csv", "report.md"] {
        assert!(a.path().join("reports").join(name).exists());
    }
    let md = ok(a.path(), &["-q", "report", "--input", "reports/report.json"]);
    assert!(md.contains("| **avg all** |  | 100.0 | 100.0 | 100.0 | 100.0 (0.0) |"), "{md}");
}

#[test]
fn ablate_and_sweep_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path());
    let common = ["--mode", "vis_in+lang", "--runs", "2", "--rollouts", "3", "--out", "out"];
    let mut args = vec!["-q", "ablate", "--k", "4"];
    args.extend(common);
    let md = ok(dir.path(), &args);
    assert!(md.contains("| **all** |"));
    assert!(dir.path().join("out/ablation.json").exists());
    let mut args = vec!["-q", "sweep-k", "--k-values", "1,2,4"];
    args.extend(common);
    let csv = ok(dir.path(), &args);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("k,mean,std\n1,"));
    let too_big = xicm(dir.path(), &["-q", "sweep-k", "--k-values", "1,500", "--mode", "lang"]);
    assert_eq!(too_big.status.code(), Some(2));
}
