//! Acceptance run over the primary criteria. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crossflow::config::Label;
use crossflow::hexfile::read_hex;
use crossflow::pipeline::train_detector;
use crossflow::synth::{cross_contract_corpus, separable_paths, write_corpus};
use crossflow::{ingest, Detector};
use crossflow_core::graph::{assemble_graph, normalize_adjacency, GraphOptions};
use crossflow_core::isa::{decode_bytecode, spec, table};
use crossflow_core::model::{
    class_weights, gradient_check, path_tokens, predict, train, CheckTarget, GradCheckSample, ModelConfig, Params,
    TrainConfig, WeightScheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

#[path = "../../core/tests/stack_oracle.rs"]
#[allow(dead_code, unused_imports)]
mod stack_oracle;

#[path = "../../core/tests/path_oracle.rs"]
#[allow(dead_code, unused_imports)]
mod path_oracle;

#[path = "../../core/tests/graph_oracle.rs"]
#[allow(dead_code, unused_imports)]
mod graph_oracle;

#[path = "../../core/tests/link_fixtures.rs"]
#[allow(dead_code, unused_imports)]
mod link_fixtures;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn golden_corpus() -> Check {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "hex"))
        .collect();
    files.sort();
    ensure(files.len() == 25, format!("{} bytecodes, expected 25", files.len()))?;
    let mut instructions = 0;
    for f in &files {
        let code = read_hex(f).map_err(|e| e.to_string())?;
        let expect = std::fs::read_to_string(f.with_extension("lst")).unwrap();
        let mut got = String::new();
        for ins in decode_bytecode(&code) {
            got += &format!("{ins}\n");
            instructions += 1;
        }
        if got != expect {
            let line = got.lines().zip(expect.lines()).position(|(a, b)| a != b).unwrap_or(0);
            return Err(format!("{} differs at line {}", f.display(), line + 1));
        }
    }
    let tsv = std::fs::read_to_string(dir.join("opcodes.tsv")).unwrap();
    let mut rows = 0;
    for line in tsv.lines().skip(1) {
        let cols: Vec<&str> = line.split('\t').collect();
        let byte = u8::from_str_radix(cols[0].trim_start_matches("0x"), 16).unwrap();
        let s = spec(byte);
        let got = (s.mnemonic, s.immediate_width.to_string(), s.pops.to_string(), s.pushes.to_string());
        let want = (cols[1], cols[2].to_string(), cols[3].to_string(), cols[4].to_string());
        ensure(got.0 == want.0 && got.1 == want.1 && got.2 == want.2 && got.3 == want.3, format!("opcode {byte:#04x}: {got:?} vs {want:?}"))?;
        rows += 1;
    }
    let defined = table().iter().filter(|s| s.defined).count();
    ensure(rows >= defined, format!("reference table has {rows} rows, {defined} opcodes defined"))?;
    Ok(format!("{} listings, {instructions} instructions byte-exact; {rows} opcode rows agree", files.len()))
}

fn gradients() -> Check {
    let cfg = ModelConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let ops = ["PUSH1", "ADD", "CALLER", "SSTORE", "SLOAD", "EQ", "JUMPI", "CALL"];
    let paths: Vec<Vec<&str>> =
        (0..6).map(|_| (0..rng.random_range(3..12)).map(|_| ops[rng.random_range(0..ops.len())]).collect()).collect();
    let g = assemble_graph(paths.iter().map(|p| p.iter().copied()), GraphOptions { d: cfg.hidden, ..GraphOptions::default() });
    let tokens = paths
        .iter()
        .map(|p| path_tokens(p.iter().map(|m| crossflow_core::isa::by_mnemonic(m).unwrap().byte), cfg.max_len))
        .collect();
    let labels = vec![0, 1, 0, 1, 1, 0];
    let weights = class_weights(&[0, 1, 1], WeightScheme::Categories).unwrap();
    let sample = GradCheckSample { adj: normalize_adjacency(&g), tokens, labels, weights };
    let params = Params::randomized(&cfg, 3, 0.2);
    let mut out = Vec::new();
    for (target, tol) in [(CheckTarget::Gcn, 1e-6), (CheckTarget::Encoder, 1e-4), (CheckTarget::Full, 1e-4)] {
        let err = gradient_check(&cfg, &params, &sample, target).map_err(|e| e.to_string())?;
        ensure(err <= tol, format!("{target:?} relative error {err:e} > {tol:e}"))?;
        out.push(format!("{target:?} {err:.1e}"));
    }
    Ok(format!("width {}: {}", cfg.hidden, out.join(", ")))
}

fn mnemonics(p: &[u8]) -> impl Iterator<Item = &'static str> + '_ {
    p.iter().map(|&b| spec(b).mnemonic)
}

fn overfit() -> Check {
    let (train_paths, train_labels) = separable_paths(20, 1);
    let (test_paths, test_labels) = separable_paths(10, 2);
    let cfg = ModelConfig { embed: 64, hidden: 128, layers: 4, heads: 4, ff: 256, max_len: 64, gcn_hidden: 64, ..ModelConfig::default() };
    let tc = TrainConfig { lr_encoder: 1e-4, lr_gcn: 1e-2, batch_size: 4, epochs: 200, truncation: 64, ..TrainConfig::default() };
    let g = assemble_graph(train_paths.iter().map(|p| mnemonics(p)), GraphOptions { d: cfg.hidden, ..GraphOptions::default() });
    let tokens: Vec<Vec<u16>> = train_paths.iter().map(|p| path_tokens(p.iter().copied(), tc.truncation)).collect();
    let (model, history) = train(&cfg, &tc, &normalize_adjacency(&g), &tokens, &train_labels).map_err(|e| e.to_string())?;
    let first = history.iter().find(|m| m.train_acc == 1.0).map(|m| m.epoch);
    ensure(first.is_some(), format!("training accuracy peaked at {:.2}", history.iter().map(|m| m.train_acc).fold(0.0, f64::max)))?;
    let with_test = g.attach_paths(test_paths.iter().map(|p| mnemonics(p)));
    let test_tokens: Vec<Vec<u16>> = test_paths.iter().map(|p| path_tokens(p.iter().copied(), tc.truncation)).collect();
    let preds = predict(&model, &normalize_adjacency(&with_test), &test_tokens, tc.lambda).map_err(|e| e.to_string())?;
    let hits = preds.iter().zip(&test_labels).filter(|(p, &l)| p.label == l).count();
    ensure(hits == test_labels.len(), format!("test accuracy {hits}/{}", test_labels.len()))?;
    Ok(format!("train accuracy 1.0 first at epoch {}, test {hits}/{}", first.unwrap(), test_labels.len()))
}

fn ablation() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), &cross_contract_corpus(60, 5, Label::AccessControl)).unwrap();
    let entries = ingest(&manifest).map_err(|e| e.to_string())?.entries;
    let mut acc = Vec::new();
    for npc in [false, true] {
        let mut c = common::small_config(60);
        c.no_link = npc;
        c.no_validate = npc;
        let (_, r) = train_detector(&entries, Detector::AccessControl, &c).map_err(|e| e.to_string())?;
        acc.push(r.test_accuracy.ok_or("empty test split")?);
    }
    let gap = acc[0] - acc[1];
    let line = format!("full {:.1}%, npc {:.1}%, gap {:.1} pp", 100.0 * acc[0], 100.0 * acc[1], 100.0 * gap);
    ensure(gap >= 0.10 - 1e-12, line.clone())?;
    Ok(line)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(common::bin()).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = common::write_mixed(d, 6, 21);
    let mut cfg = common::small_config(5);
    for det in Detector::ALL {
        cfg.checkpoints.insert(det, format!("{det}.ckpt").into());
    }
    let cfg_path = d.join("pipeline.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let (c, m) = (cfg_path.to_str().unwrap(), manifest.to_str().unwrap());
    for det in Detector::ALL {
        run_cli(&["--config", c, "train", "--manifest", m, "--detector", det.name()])?;
    }
    let runs: Vec<_> = ["scan-a", "scan-b"]
        .iter()
        .map(|r| {
            let out = d.join(r);
            run_cli(&["--config", c, "scan", "--manifest", m, "--out", out.to_str().unwrap(), "--text"]).map(|_| dir_bytes(&out))
        })
        .collect::<Result<_, _>>()?;
    ensure(runs[0].len() == 2 * 12 + 1, format!("{} report files", runs[0].len()))?;
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        ensure(a == b, format!("{} differs between runs", a.0))?;
    }
    let bytes: usize = runs[0].iter().map(|f| f.1.len()).sum();
    Ok(format!("{} files, {bytes} bytes identical across two scans", runs[0].len()))
}

fn main() {
    let criteria: Vec<(&str, Option<Duration>, Box<dyn FnOnce() -> Check>)> = vec![
        ("disassembler golden corpus", Some(Duration::from_secs(1)), Box::new(golden_corpus)),
        ("differential stack oracle", Some(Duration::from_secs(30)), Box::new(|| Ok(stack_oracle::differential(1500)))),
        (
            "cfg/link fixtures",
            None,
            Box::new(|| {
                let c = link_fixtures::counts();
                ensure(c == [(1, 1), (2, 2), (0, 0)], format!("{c:?}"))?;
                Ok(format!("matched {:?}, ambiguous {:?}, no-match {:?} (call, return) edges", c[0], c[1], c[2]))
            }),
        ),
        (
            "path enumeration oracle",
            None,
            Box::new(|| {
                let hand = path_oracle::hand_fixtures();
                Ok(format!("{hand} hand-fixture walks; {}", path_oracle::random_fixtures(200)))
            }),
        ),
        (
            "ppmi/tf-idf oracles",
            None,
            Box::new(|| Ok(format!("100 corpora, max abs error {:.1e} (tol 1e-9)", graph_oracle::ppmi_tfidf(100, 1e-9)))),
        ),
        (
            "normalization identity",
            None,
            Box::new(|| {
                graph_oracle::identity_graph(5);
                let err = graph_oracle::normalization(100, 1e-12);
                Ok(format!("empty graph exact identity; 100 graphs max abs error {err:.1e} (tol 1e-12)"))
            }),
        ),
        ("gradient checks", Some(Duration::from_secs(60)), Box::new(gradients)),
        ("overfit sanity", Some(Duration::from_secs(300)), Box::new(overfit)),
        ("linking ablation", None, Box::new(ablation)),
        ("end-to-end determinism", None, Box::new(determinism)),
    ];
    let total = criteria.len();
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let start = Instant::now();
        let result = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into())),
        };
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS  {name} [{elapsed:.2?}]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} [{elapsed:.2?}]: {why}");
            }
        }
    }
    println!("{} of {total} criteria passed", total - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
