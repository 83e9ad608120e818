//! The two-contract selector fixtures: matched, ambiguous and unmatched call sites.

use crossflow_core::asm::assemble;
use crossflow_core::cfg::ContractCfg;
use crossflow_core::link::{link, link_report, LinkSummary, LinkedCfg, NodeRef};
use crossflow_core::paths::{enumerate_paths, PathBounds};
use crossflow_core::symstack::validate_path;

const CALLER: &str = "PUSH4 0xdeadbeef PUSH1 0xe0 SHL PUSH1 0 MSTORE
    PUSH1 0 PUSH1 0 PUSH1 4 PUSH1 0 PUSH1 0 PUSH20 0xca11ee GAS CALL
    POP STOP";

fn callee(selector: u32) -> String {
    format!(
        "PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR DUP1 PUSH4 {selector:#010x} EQ PUSH2 @f JUMPI PUSH1 0 DUP1 REVERT
         @f: JUMPDEST CALLER PUSH1 0 SSTORE STOP"
    )
}

fn fixture(callees: &[u32]) -> LinkedCfg {
    let mut cfgs = vec![ContractCfg::build("caller", &assemble(CALLER).unwrap())];
    for (k, &s) in callees.iter().enumerate() {
        cfgs.push(ContractCfg::build(format!("callee{k}"), &assemble(&callee(s)).unwrap()));
    }
    link(cfgs)
}

fn pc(l: &LinkedCfg, n: NodeRef) -> (String, usize) {
    let c = &l.contracts[n.contract];
    (c.contract_id.clone(), c.blocks[n.block].start_pc)
}

/// `(call edges, return edges)` of the matched, ambiguous and unmatched fixtures,
/// with their endpoints and summaries checked.
pub fn counts() -> [(usize, usize); 3] {
    let matched = fixture(&[0xdeadbeef]);
    let ambiguous = fixture(&[0xdeadbeef, 0xdeadbeef]);
    let unmatched = fixture(&[0x12345678]);

    let call_pc = matched.call_sites[0].call_pc;
    assert_eq!(call_pc, 0x2b);
    assert_eq!(pc(&matched, matched.call_edges[0].from), ("caller".into(), 0));
    // callee body after the 21-byte dispatcher
    assert_eq!(pc(&matched, matched.call_edges[0].to), ("callee0".into(), 0x15));
    assert_eq!(pc(&matched, matched.return_edges[0].from), ("callee0".into(), 0x15));
    assert_eq!(pc(&matched, matched.return_edges[0].to), ("caller".into(), call_pc + 1));
    let s = |matched, ambiguous, unknown, calls, returns| LinkSummary {
        matched,
        ambiguous,
        unknown,
        unresolved: 0,
        call_edges: calls,
        return_edges: returns,
    };
    assert_eq!(link_report(&matched), s(1, 0, 0, 1, 1));
    assert!(ambiguous.call_sites[0].ambiguous);
    assert_eq!(link_report(&ambiguous), s(0, 1, 0, 2, 2));
    assert_eq!(link_report(&unmatched), s(0, 0, 1, 0, 0));

    // the crossing path replays feasibly through the callee and back
    let caller = matched.contract_index("caller").unwrap();
    let paths = enumerate_paths(&matched, NodeRef { contract: caller, block: 0 }, PathBounds::default());
    assert_eq!(paths.len(), 1, "{:?}", paths.iter().map(|p| (p.block_starts(), p.truncated)).collect::<Vec<_>>());
    assert_eq!(paths[0].crossings.len(), 2);
    assert!(validate_path(&paths[0]).feasible);

    [&matched, &ambiguous, &unmatched].map(|l| (l.call_edges.len(), l.return_edges.len()))
}

#[test]
fn fixture_edge_counts() {
    assert_eq!(counts(), [(1, 1), (2, 2), (0, 0)]);
}
