//! Synthetic corpora for training sanity checks and the linking ablation.
//!
//! In the cross-contract corpus every protocol has a caller `a` whose only
//! function stages a selector and calls out, and a callee `b` exposing two
//! functions. Malicious and benign protocols differ only in which of `b`'s
//! selectors `a` stages, so the class is visible on a path only once the call is
//! linked into `b`.

use std::path::{Path, PathBuf};

use crossflow_core::asm::assemble;
use crossflow_core::cfg::Selector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Label;
use crate::error::{Error, Result};
use crate::manifest::{EntryHint, ProtocolManifestEntry};

pub const ENTRY_SELECTOR: u32 = 0x6d4ce63c;
pub const MALICIOUS_SELECTOR: u32 = 0x13af4035;
pub const BENIGN_SELECTOR: u32 = 0x70a08231;

const CALL_ARGS: &str = "PUSH1 0 PUSH1 0 PUSH1 0x24 PUSH1 0 PUSH1 0 PUSH20 0xb0b0 GAS";

/// Stack-neutral snippets shared by both classes.
const FILLER: [&str; 8] = [
    "PUSH1 {} POP",
    "CALLVALUE POP",
    "PUSH1 {} PUSH1 {} ADD POP",
    "PUSH1 {} MLOAD POP",
    "GAS POP",
    "PUSH1 {} DUP1 POP POP",
    "PUSH1 {} PUSH1 0x40 MSTORE",
    "ADDRESS BALANCE POP",
];

/// Ownership write with no caller check.
const MALICIOUS_BODY: &str = "CALLER PUSH1 0 SSTORE ORIGIN POP SELFBALANCE POP";
/// Caller compared against the stored owner before state changes.
const BENIGN_BODY: &str = "CALLER PUSH1 0 SLOAD EQ ISZERO PUSH2 @deny JUMPI TIMESTAMP PUSH1 1 SSTORE";

fn filler(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut out = String::new();
    for _ in 0..n {
        let mut s = FILLER[rng.random_range(0..FILLER.len())].to_string();
        while s.contains("{}") {
            s = s.replacen("{}", &rng.random_range(0..256u32).to_string(), 1);
        }
        out.push(' ');
        out += &s;
    }
    out
}

fn dispatcher(selectors: &[(u32, &str)]) -> String {
    let mut s = String::from("PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR");
    for (sel, label) in selectors {
        s += &format!(" DUP1 PUSH4 {sel:#010x} EQ PUSH2 @{label} JUMPI");
    }
    s + " PUSH1 0 DUP1 REVERT"
}

pub fn caller_source(rng: &mut ChaCha8Rng, staged: u32) -> String {
    let n = rng.random_range(2..5);
    let pre = filler(rng, n);
    let n = rng.random_range(1..4);
    let post = filler(rng, n);
    format!(
        "{} @f: JUMPDEST{pre} PUSH4 {staged:#010x} PUSH1 0xe0 SHL PUSH1 0 MSTORE {CALL_ARGS} CALL POP{post} STOP",
        dispatcher(&[(ENTRY_SELECTOR, "f")])
    )
}

pub fn callee_source(rng: &mut ChaCha8Rng) -> String {
    let mut fns = [(MALICIOUS_SELECTOR, "m"), (BENIGN_SELECTOR, "g")];
    if rng.random_bool(0.5) {
        fns.swap(0, 1);
    }
    let mut s = dispatcher(&fns);
    for (sel, label) in fns {
        let body = if sel == MALICIOUS_SELECTOR { MALICIOUS_BODY } else { BENIGN_BODY };
        let n = rng.random_range(0..3);
        let pad = filler(rng, n);
        s += &format!(" @{label}: JUMPDEST{pad} {body} STOP");
    }
    s + " @deny: JUMPDEST PUSH1 0 DUP1 REVERT"
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticProtocol {
    pub id: String,
    pub label: Label,
    /// `(contract id, runtime bytecode)`
    pub contracts: Vec<(String, Vec<u8>)>,
    pub entry_hints: Vec<EntryHint>,
}

/// `n` protocols alternating between `positive` and benign labels.
pub fn cross_contract_corpus(n: usize, seed: u64, positive: Label) -> Vec<SyntheticProtocol> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let malicious = i % 2 == 0;
            let staged = if malicious { MALICIOUS_SELECTOR } else { BENIGN_SELECTOR };
            let a = assemble(&caller_source(&mut rng, staged)).expect("caller assembles");
            let b = assemble(&callee_source(&mut rng)).expect("callee assembles");
            SyntheticProtocol {
                id: format!("synthetic-{i:03}"),
                label: if malicious { positive } else { Label::Benign },
                contracts: vec![("a".into(), a), ("b".into(), b)],
                entry_hints: vec![EntryHint { contract: "a".into(), selector: Some(Selector(ENTRY_SELECTOR)) }],
            }
        })
        .collect()
}

/// Write one directory of `.hex` files per protocol and a `manifest.jsonl`
/// referencing them; returns the manifest path.
pub fn write_corpus(dir: &Path, protocols: &[SyntheticProtocol]) -> Result<PathBuf> {
    let mut lines = String::new();
    for p in protocols {
        let sub = dir.join(&p.id);
        std::fs::create_dir_all(&sub).map_err(Error::io(&sub))?;
        let mut files = Vec::new();
        for (id, code) in &p.contracts {
            let f = sub.join(format!("{id}.hex"));
            std::fs::write(&f, crossflow_core::hexser::to_hex(code) + "\n")
                .map_err(Error::io(&f))?;
            files.push(PathBuf::from(&p.id).join(format!("{id}.hex")));
        }
        let entry = ProtocolManifestEntry {
            protocol_id: p.id.clone(),
            contract_files: files,
            label: Some(p.label),
            chain: None,
            entry_hints: p.entry_hints.clone(),
        };
        lines += &serde_json::to_string(&entry).expect("entry serializes");
        lines.push('\n');
    }
    let manifest = dir.join("manifest.jsonl");
    std::fs::write(&manifest, lines).map_err(Error::io(&manifest))?;
    Ok(manifest)
}

/// Single-contract opcode sequences: a shared random background with three
/// class-specific opcodes planted at random positions. Labels alternate 0, 1.
pub fn separable_paths(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<usize>) {
    const SHARED: [u8; 12] = [0x60, 0x80, 0x81, 0x01, 0x03, 0x52, 0x51, 0x56, 0x57, 0x5b, 0x90, 0x50];
    const MARKS: [[u8; 3]; 2] = [[0x33, 0x54, 0x14], [0xf1, 0x55, 0x3d]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let len = rng.random_range(16..32);
        let mut p: Vec<u8> = (0..len).map(|_| SHARED[rng.random_range(0..SHARED.len())]).collect();
        for &m in &MARKS[c] {
            let at = rng.random_range(0..p.len());
            p.insert(at, m);
        }
        paths.push(p);
        labels.push(c);
    }
    (paths, labels)
}
