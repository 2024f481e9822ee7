use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn xshark(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xshark"))
        .args(args)
        .current_dir(dir)
        .env_remove("XSHARK_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<Value> {
    let out = xshark(dir, args);
    assert!(
        out.status.success(),
        "xshark {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with('{'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn setup(workload: &[&str]) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["gen"];
    args.extend_from_slice(workload);
    args.extend(["-o", "k.xasm"]);
    ok(dir.path(), &args);
    ok(dir.path(), &["asm", "k.xasm", "-o", "k.xprog"]);
    let p = dir.path().to_path_buf();
    (dir, p)
}

#[test]
fn starvation_pipeline_halves_cycles_with_equal_state() {
    let (_t, d) = setup(&["starvation"]);
    ok(
        &d,
        &[
            "record", "k.xprog", "--break", "prologue", "--count", "100000", "-o", "k.trace",
        ],
    );
    ok(&d, &["replay", "k.trace", "-o", "base.jsonl"]);
    let sugg = ok(&d, &["suggest", "k.trace", "base.jsonl", "-o", "sugg.json"]);
    assert!(!sugg.is_empty());
    let applied = ok(&d, &["apply", "k.trace", "sugg.json", "--verify", "-o", "new.jsonl"]);
    assert_eq!(applied.last().unwrap()["combined"]["status"], "verified_speedup");
    let cmp = ok(&d, &["compare", "base.jsonl", "new.jsonl"]);
    assert_eq!(cmp[0]["state_equal"], true);
    assert!(cmp[0]["cycle_reduction"].as_f64().unwrap() >= 0.5, "{}", cmp[0]);
    assert!(cmp[0]["stall_delta"].as_i64().unwrap() < 0);
}

#[test]
fn unreachable_breakpoint_exits_2() {
    let (_t, d) = setup(&["starvation"]);
    let out = xshark(
        &d,
        &[
            "record", "k.xprog", "--break", "5", "--hit", "2", "--count", "4", "-o", "t",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("code:BP_NOT_HIT"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_1() {
    let d = TempDir::new().unwrap();
    let out = xshark(d.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("code:USAGE"));
    let out = xshark(d.path(), &["run", "missing.xprog"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("code:IO"));
    fs::write(d.path().join("bad.xasm"), "S_LDI s1, 1\nS_FOO s2\n").unwrap();
    let out = xshark(d.path(), &["asm", "bad.xasm", "-o", "bad.xprog"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("code:ASM: bad.xasm:2:"), "{}", stderr(&out));
}

#[test]
fn faults_exit_2() {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("f.xasm"), "DMA_WAIT 3\nHALT\n").unwrap();
    let out = xshark(d.path(), &["run", "f.xasm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("code:FAULT"));
}

#[test]
fn allgather_timeline_leads_with_nine_stalled_setup_dmas() {
    let (_t, d) = setup(&["allgather"]);
    ok(&d, &["run", "k.xprog", "-o", "live.jsonl"]);
    ok(
        &d,
        &["analyze", "live.jsonl", "--dma", "--program", "k.xprog", "-o", "rep"],
    );
    let mut names: Vec<String> = fs::read_dir(d.join("rep"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["dma_timeline.svg", "report.json"]);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("rep/report.json")).unwrap()).unwrap();
    let dma = report["dma"].as_array().unwrap();
    for r in &dma[..9] {
        assert_eq!(r["scenario"], "base_stall");
        assert_eq!(r["region"], "setup");
    }
    assert!(dma[9..].iter().all(|r| r["region"] != "setup"));
    let svg = fs::read_to_string(d.join("rep/dma_timeline.svg")).unwrap();
    assert_eq!(svg.matches("<text x=\"4\" y=").count(), 1 + dma.len());
}

#[test]
fn config_flag_and_env_change_timing() {
    let (_t, d) = setup(&["starvation", "--tiles", "2"]);
    fs::write(d.join("fast.json"), r#"{"t_b": 10}"#).unwrap();
    let default = ok(&d, &["run", "k.xprog"])[0]["end_cycle"].as_u64().unwrap();
    let flag = ok(&d, &["--config", "fast.json", "run", "k.xprog"])[0]["end_cycle"]
        .as_u64()
        .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xshark"))
        .args(["run", "k.xprog"])
        .current_dir(&d)
        .env("XSHARK_CONFIG", "fast.json")
        .output()
        .unwrap();
    let env: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(flag < default);
    assert_eq!(env["end_cycle"].as_u64().unwrap(), flag);
    fs::write(d.join("bad.json"), r#"{"t_b": 0}"#).unwrap();
    let out = xshark(&d, &["--config", "bad.json", "run", "k.xprog"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("code:BAD_CONFIG"));
}

#[test]
fn replay_refuses_other_config() {
    let (_t, d) = setup(&["starvation", "--tiles", "2"]);
    fs::write(d.join("fast.json"), r#"{"t_b": 10}"#).unwrap();
    ok(
        &d,
        &[
            "record", "k.xprog", "--break", "0", "--count", "1000", "--format", "text", "-o", "k.trace",
        ],
    );
    let out = xshark(&d, &["--config", "fast.json", "replay", "k.trace", "-o", "e.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("code:CONFIG_MISMATCH"));
    ok(
        &d,
        &[
            "--config",
            "fast.json",
            "replay",
            "k.trace",
            "--allow-config-mismatch",
            "-o",
            "e.jsonl",
        ],
    );
}

#[test]
fn outputs_are_reproducible() {
    let (_t, d) = setup(&["starvation", "--tiles", "4"]);
    for run in ["a", "b"] {
        ok(
            &d,
            &[
                "record",
                "k.xprog",
                "--break",
                "0",
                "--count",
                "1000",
                "-o",
                &format!("{run}.trace"),
            ],
        );
        ok(&d, &["replay", &format!("{run}.trace"), "-o", &format!("{run}.jsonl")]);
        ok(&d, &["analyze", &format!("{run}.jsonl"), "-o", &format!("{run}_rep")]);
    }
    let same = |a: &str, b: &str| assert_eq!(fs::read(d.join(a)).unwrap(), fs::read(d.join(b)).unwrap(), "{a}");
    same("a.trace", "b.trace");
    same("a.jsonl", "b.jsonl");
    for f in [
        "report.json",
        "suggestions.json",
        "util_mxu.csv",
        "dma_timeline.svg",
        "vmem_heatmap.svg",
    ] {
        same(&format!("a_rep/{f}"), &format!("b_rep/{f}"));
    }
}

#[test]
fn disasm_round_trips() {
    let (_t, d) = setup(&["allgather", "--pinned"]);
    ok(&d, &["disasm", "k.xprog", "-o", "again.xasm"]);
    ok(&d, &["asm", "again.xasm", "-o", "again.xprog"]);
    assert_eq!(
        fs::read(d.join("k.xprog")).unwrap(),
        fs::read(d.join("again.xprog")).unwrap()
    );
}

#[test]
fn apply_rejects_suggestion_past_a_dependency() {
    let (_t, d) = setup(&["starvation", "--tiles", "3"]);
    ok(
        &d,
        &["record", "k.xprog", "--break", "0", "--count", "1000", "-o", "k.trace"],
    );
    ok(&d, &["replay", "k.trace", "-o", "base.jsonl"]);
    ok(&d, &["suggest", "k.trace", "base.jsonl", "-o", "sugg.json"]);
    let mut sugg: Value = serde_json::from_str(&fs::read_to_string(d.join("sugg.json")).unwrap()).unwrap();
    // Hoisting to the window start puts the tile fetch ahead of the table
    // DMA that produced its descriptor.
    for s in sugg.as_array_mut().unwrap() {
        s["proposed_position"] = 0.into();
        s["chain"] = Value::Array(Vec::new());
    }
    fs::write(d.join("bad.json"), sugg.to_string()).unwrap();
    let out = xshark(&d, &["apply", "k.trace", "bad.json", "--verify", "-o", "new.jsonl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("rejected"));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(lines[..lines.len() - 1]
        .iter()
        .all(|l| l["verification"]["status"] == "rejected"));
    assert_eq!(lines.last().unwrap()["applied"], 0);
    let out = xshark(&d, &["apply", "k.trace", "bad.json", "-o", "new.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("code:DIVERGENCE"), "{}", stderr(&out));
}
