//! The command-line surface: subcommand outputs and exit codes.

use std::path::Path;
use std::process::{Command, Output};

use crossflow::graphfile::read_graph;
use crossflow_core::asm::assemble;
use crossflow_core::isa::decode_bytecode;
use crossflow_core::paths::{DataPath, PathEntry, PathStep};
use serde_json::Value;

mod common;

fn run(args: &[&str]) -> Output {
    Command::new(common::bin()).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn golden(name: &str) -> String {
    format!("{}/tests/fixtures/golden/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["disasm"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["scan", "--help"])), 0);
    let missing = run(&["disasm", "/nonexistent/x.hex"]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/x.hex"));

    let dir = tempfile::tempdir().unwrap();
    let bad_hex = dir.path().join("bad.hex");
    std::fs::write(&bad_hex, "0x60zz").unwrap();
    assert_eq!(code(&run(&["disasm", p(&bad_hex)])), 2);
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "windw = 4\n").unwrap();
    assert_eq!(code(&run(&["--config", p(&bad_cfg), "disasm", &golden("math_contract.hex")])), 2);
    let zero_window = dir.path().join("zero.toml");
    std::fs::write(&zero_window, "window = 0\n").unwrap();
    assert_eq!(code(&run(&["--config", p(&zero_window), "disasm", &golden("math_contract.hex")])), 2);
}

#[test]
fn disasm_prints_the_listing() {
    let o = run(&["disasm", &golden("offchain_lookup.hex")]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), std::fs::read_to_string(golden("offchain_lookup.lst")).unwrap());
}

#[test]
fn cfg_dump_is_structural_json() {
    let o = run(&["cfg", &golden("math_contract.hex")]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["contract_id"], "math_contract");
    let blocks = v["blocks"].as_array().unwrap();
    assert!(blocks.len() > 10);
    assert_eq!(blocks[0]["start_pc"], 0);
    let kinds: Vec<&str> = blocks.iter().flat_map(|b| b["edges"].as_array().unwrap()).map(|e| e["kind"].as_str().unwrap()).collect();
    assert!(kinds.contains(&"branch-taken") && kinds.contains(&"fallthrough"));
    let sels: Vec<&str> = v["functions"].as_array().unwrap().iter().filter_map(|f| f["selector"].as_str()).collect();
    assert!(!sels.is_empty());
    assert!(sels.iter().all(|s| s.len() == 10 && s.starts_with("0x")));
    assert!(v["unresolved_jump_pcs"].is_array());
}

#[test]
fn link_paths_validate_featurize_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    common::write_mixed(d, 2, 3);
    let protocol = d.join("synthetic-000");
    let linked = d.join("linked.json");
    let o = run(&["link", p(&protocol)]);
    assert_eq!(code(&o), 0);
    std::fs::write(&linked, &o.stdout).unwrap();
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["call_edges"].as_array().unwrap().len(), 1);

    let o = run(&["paths", p(&linked)]);
    assert_eq!(code(&o), 0);
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!lines.is_empty());
    assert!(lines.iter().any(|l| !l["crossings"].as_array().unwrap().is_empty()));
    for l in &lines {
        assert_eq!(l["mnemonics"].as_array().unwrap().len(), l["steps"].as_array().unwrap().len());
    }

    // one extra path that underflows at its first instruction
    let ins = decode_bytecode(&assemble("ADD STOP").unwrap());
    let bad = DataPath {
        entry: PathEntry { contract: 0, contract_id: "x".into(), block: 0 },
        steps: ins.into_iter().map(|ins| PathStep { contract: 0, ins }).collect(),
        edges: vec![],
        crossings: vec![],
        truncated: false,
    };
    let paths = d.join("paths.jsonl");
    let mut text = stdout(&o);
    text += &serde_json::to_string(&bad).unwrap();
    text.push('\n');
    std::fs::write(&paths, text).unwrap();

    let o = run(&["validate", p(&paths)]);
    assert_eq!(code(&o), 0);
    let checked: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(checked.len(), lines.len() + 1);
    let last = checked.last().unwrap();
    assert_eq!(last["feasible"], false);
    assert_eq!(last["reason"]["kind"], "underflow");
    assert_eq!(last["reason"]["pc"], 0);
    let feasible = checked.iter().filter(|c| c["feasible"] == true).count();
    assert_eq!(feasible, lines.len());
    let validated = d.join("validated.jsonl");
    std::fs::write(&validated, &o.stdout).unwrap();

    let graph = d.join("graph.bin");
    let o = run(&["featurize", p(&validated), "--out", p(&graph)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (g, _) = read_graph(&graph).unwrap();
    assert_eq!(g.n_path, feasible);

    std::fs::write(&paths, "{not json}\n").unwrap();
    assert_eq!(code(&run(&["validate", p(&paths)])), 2);
}

#[test]
fn train_then_scan() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = common::write_mixed(d, 4, 9);
    // a malformed line is reported and skipped
    let mut text = std::fs::read_to_string(&manifest).unwrap();
    text += "{\"protocol_id\": 7}\n";
    std::fs::write(&manifest, text).unwrap();
    let cfg_path = d.join("pipeline.toml");
    std::fs::write(&cfg_path, common::small_config(3).to_toml()).unwrap();
    let (c, m) = (p(&cfg_path), p(&manifest));

    let ckpt = d.join("ac.ckpt");
    let o = run(&["--config", c, "--seed", "4", "train", "--manifest", m, "--detector", "access-control", "--out", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 9"));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["epochs"], 3);
    assert_eq!(summary["detector"], "access-control");
    let metrics = std::fs::read_to_string(d.join("ac.ckpt.metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let out = d.join("reports");
    assert_eq!(code(&run(&["--config", c, "scan", "--manifest", m, "--out", p(&out)])), 2, "no checkpoints configured");
    let arg = format!("access-control={}", p(&ckpt));
    let o = run(&["--config", c, "scan", "--manifest", m, "--out", p(&out), "--checkpoint", &arg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let index: Value = serde_json::from_str(&std::fs::read_to_string(out.join("index.json")).unwrap()).unwrap();
    let protocols = index["protocols"].as_array().unwrap();
    assert_eq!(protocols.len(), 8);
    assert_eq!(index["manifest_errors"].as_array().unwrap().len(), 1);
    for e in protocols {
        let report: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(e["report"].as_str().unwrap())).unwrap()).unwrap();
        assert_eq!(report["protocol_id"], e["protocol_id"]);
        let verdict = report["verdicts"]["access-control"].as_str().unwrap();
        assert!(["malicious", "benign", "no-evidence"].contains(&verdict), "{verdict}");
        assert!(report["verdicts"].get("flash-loan").is_none());
        assert!(!report["paths"].as_array().unwrap().is_empty());
    }
}
