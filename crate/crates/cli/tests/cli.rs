use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use rectiflow_cli::Cli;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rectiflow"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn rectiflow")
}

fn last_record(out: &Output) -> serde_json::Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout.lines().last().expect("run record line");
    serde_json::from_str(line).expect("run record is JSON")
}

const TINY: &str = r#"{"total_steps": 3, "tau_steps": 2, "batch_size": 2, "resolution": 16, "data": {"toy_images": 8}}"#;

fn trained(dir: &Path) {
    std::fs::write(dir.join("tiny.json"), TINY).unwrap();
    let out = run(dir, &["train", "--config", "tiny.json", "--checkpoint", "ck.bin", "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_documents_every_flag() {
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let name = sub.get_name().to_string();
        let out = bin().args([name.as_str(), "--help"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0));
        let help = String::from_utf8_lossy(&out.stdout);
        for arg in sub.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "{name} --help lacks --{long}");
            }
        }
    }
    let top = bin().arg("--help").output().unwrap();
    let help = String::from_utf8_lossy(&top.stdout);
    for sub in cmd.get_subcommands() {
        assert!(help.contains(sub.get_name()));
    }
}

#[test]
fn version_and_usage_exit_codes() {
    let v = bin().arg("--version").output().unwrap();
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains("v0.1.0"));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    let out = bin()
        .args(["enhance", "--sampler", "euler", "--midpoint", "2", "--checkpoint", "a", "--input", "b", "--output", "c"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin()
        .args(["enhance", "--sampler", "meanvalue", "--steps", "5", "--midpoint", "5", "--checkpoint", "a", "--input", "b", "--output", "c"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_enhance_and_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    let out = run(dir, &["make-toy-corpus", "--output", "toy", "--count", "2", "--resolution", "16"]);
    assert!(out.status.success());
    let rec = last_record(&out);
    assert_eq!(rec["command"], "make-toy-corpus");

    let out = run(dir, &["degrade", "--input", "toy/toy_00000.png", "--output", "lq.png", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(
        dir,
        &["enhance", "--checkpoint", "ck.bin", "--input", "lq.png", "--output", "hq.png", "--run-record", "rec.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = last_record(&out);
    assert_eq!(rec["network_evaluations"], 4);
    assert_eq!(rec["config_hash"].as_str().unwrap().len(), 64);
    for key in ["command", "version", "seed", "wall_time_s"] {
        assert!(rec.get(key).is_some(), "record lacks {key}");
    }
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("rec.json")).unwrap()).unwrap();
    assert_eq!(saved["network_evaluations"], 4);
    assert!(dir.join("hq.png").exists());

    let out = run(
        dir,
        &["enhance", "--checkpoint", "ck.bin", "--input", "lq.png", "--output", "e.png", "--sampler", "euler", "--steps", "3"],
    );
    assert_eq!(last_record(&out)["network_evaluations"], 3);
    let out = run(dir, &["enhance", "--checkpoint", "ck.bin", "--input", "lq.png", "--output", "n.png", "--ablation", "no-flow"]);
    assert_eq!(last_record(&out)["network_evaluations"], 1);

    let out = run(dir, &["inspect-checkpoint", "--checkpoint", "ck.bin"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("\"kind\": \"flow\""));
}

#[test]
fn corrupted_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    let mut bytes = std::fs::read(dir.join("ck.bin")).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(dir.join("bad.bin"), &bytes).unwrap();
    let out = run(dir, &["inspect-checkpoint", "--checkpoint", "bad.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
}

#[test]
fn degrade_replay_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run(dir, &["make-toy-corpus", "--output", "toy", "--count", "1", "--resolution", "32"]);
    let a = run(dir, &["degrade", "--input", "toy/toy_00000.png", "--output", "a.png", "--seed", "11"]);
    assert!(a.status.success());
    let b = run(dir, &["degrade", "--input", "toy/toy_00000.png", "--output", "b.png", "--replay", "a.json", "--meta", "b.json"]);
    assert!(b.status.success());
    assert_eq!(std::fs::read(dir.join("a.png")).unwrap(), std::fs::read(dir.join("b.png")).unwrap());
    assert_eq!(std::fs::read(dir.join("a.json")).unwrap(), std::fs::read(dir.join("b.json")).unwrap());
}

#[test]
fn eval_reports_mismatched_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    run(dir, &["make-toy-corpus", "--output", "pred", "--count", "3", "--resolution", "16"]);
    run(dir, &["make-toy-corpus", "--output", "ref", "--count", "2", "--resolution", "16"]);
    let out = run(dir, &["eval", "--pred", "pred", "--ref", "ref"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("toy_00002.png"));

    std::fs::remove_file(dir.join("pred/toy_00002.png")).unwrap();
    let out = run(dir, &["eval", "--pred", "pred", "--ref", "ref", "--report", "r.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = last_record(&out);
    assert_eq!(rec["details"]["images"], 2);
    assert_eq!(rec["details"]["mean_psnr"], 99.0);
}

#[test]
fn eval_sweep_and_bench_on_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    trained(dir);
    let out = run(dir, &["eval", "--checkpoint", "ck.bin", "--deterministic"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(last_record(&out)["details"]["images"], 1);
    let out = run(dir, &["sweep-midpoint", "--checkpoint", "ck.bin", "--steps", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let best = last_record(&out)["details"]["best_midpoint"].as_u64().unwrap();
    assert!(best < 3);
    let out = run(dir, &["bench", "--checkpoint", "ck.bin", "--images", "2", "--euler-steps", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rec = last_record(&out);
    assert_eq!(rec["details"]["meanvalue"]["evaluations"], 8);
    assert_eq!(rec["details"]["euler"]["evaluations"], 8);
}
