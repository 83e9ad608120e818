//! Cross-contract linking: a call site whose staged 4-byte selector matches a
//! function exposed by another contract gets a call edge into that function and
//! return edges from each of its STOP/RETURN exits back to the post-call block.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cfg::{BlockId, ContractCfg, Selector};
use crate::isa;

/// Selector-masking constant; a PUSH4 of this value is never a selector.
const SELECTOR_MASK: u32 = 0xffff_ffff;
/// How many unique-predecessor blocks the selector scan may climb.
const MAX_SCAN_DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    /// Index into [`LinkedCfg::contracts`].
    pub contract: usize,
    pub block: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalleeRef {
    pub contract: usize,
    pub contract_id: String,
    /// Index into the callee's `functions`.
    pub function: usize,
    pub selector: Selector,
    pub entry_block: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "callees", rename_all = "kebab-case")]
pub enum Resolution {
    /// Linking was not attempted.
    Unresolved,
    Matched(Vec<CalleeRef>),
    ExternalUnknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub caller_contract: String,
    pub caller: NodeRef,
    pub call_pc: usize,
    pub call_opcode: u8,
    pub staged_selector: Option<Selector>,
    pub resolution: Resolution,
    /// More than one contract exposes the staged selector.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrossEdge {
    /// Index into [`LinkedCfg::call_sites`].
    pub site: usize,
    pub from: NodeRef,
    pub to: NodeRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedCfg {
    pub contracts: Vec<ContractCfg>,
    pub call_sites: Vec<CallSite>,
    pub call_edges: Vec<CrossEdge>,
    pub return_edges: Vec<CrossEdge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkOptions {
    pub enabled: bool,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions { enabled: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub matched: usize,
    pub ambiguous: usize,
    pub unknown: usize,
    pub unresolved: usize,
    pub call_edges: usize,
    pub return_edges: usize,
}

fn scan_block_for_selector(ins: &[isa::Instruction]) -> Option<Selector> {
    ins.iter()
        .rev()
        .filter(|i| i.opcode == isa::PUSH4)
        .filter_map(|i| i.push_value())
        .map(|w| w.low_u32())
        .find(|&v| v != SELECTOR_MASK)
        .map(Selector)
}

/// One call site per call-family terminator, in block order. The staged selector
/// is the last PUSH4 before the call, searched backward through the call block and
/// then up to three unique predecessors, stopping at an intervening call.
pub fn find_call_sites(cfg: &ContractCfg) -> Vec<CallSite> {
    let preds = cfg.predecessors();
    let mut sites = Vec::new();
    for b in &cfg.blocks {
        let last = cfg.last_instruction(b.id);
        if !last.spec().is_call {
            continue;
        }
        let body = cfg.block_instructions(b.id);
        let mut staged = scan_block_for_selector(&body[..body.len() - 1]);
        let mut cur = b.id;
        let mut depth = 0;
        while staged.is_none() && depth < MAX_SCAN_DEPTH {
            let [p] = preds[cur][..] else { break };
            if cfg.last_instruction(p).spec().is_call {
                break;
            }
            staged = scan_block_for_selector(cfg.block_instructions(p));
            cur = p;
            depth += 1;
        }
        sites.push(CallSite {
            caller_contract: cfg.contract_id.clone(),
            caller: NodeRef { contract: 0, block: b.id },
            call_pc: last.pc,
            call_opcode: last.opcode,
            staged_selector: staged,
            resolution: Resolution::Unresolved,
            ambiguous: false,
        });
    }
    sites
}

pub fn link(cfgs: Vec<ContractCfg>) -> LinkedCfg {
    link_with(cfgs, LinkOptions::default())
}

/// Link contracts. Contracts are ordered by `contract_id`; sites by contract then pc.
/// With linking disabled the result is the disjoint union of the inputs and every
/// site stays `Unresolved`.
pub fn link_with(mut cfgs: Vec<ContractCfg>, opts: LinkOptions) -> LinkedCfg {
    cfgs.sort_by(|a, b| a.contract_id.cmp(&b.contract_id));
    let mut call_sites = Vec::new();
    for (ci, cfg) in cfgs.iter().enumerate() {
        for mut site in find_call_sites(cfg) {
            site.caller.contract = ci;
            call_sites.push(site);
        }
    }
    let mut call_edges = Vec::new();
    let mut return_edges = Vec::new();
    if opts.enabled {
        for (si, site) in call_sites.iter_mut().enumerate() {
            let Some(sel) = site.staged_selector else {
                site.resolution = Resolution::ExternalUnknown;
                continue;
            };
            let mut callees = Vec::new();
            for (ci, callee) in cfgs.iter().enumerate() {
                if ci == site.caller.contract {
                    continue;
                }
                for (fi, f) in callee.functions.iter().enumerate() {
                    if f.selector == Some(sel) {
                        callees.push(CalleeRef {
                            contract: ci,
                            contract_id: callee.contract_id.clone(),
                            function: fi,
                            selector: sel,
                            entry_block: f.entry_block,
                        });
                    }
                }
            }
            if callees.is_empty() {
                site.resolution = Resolution::ExternalUnknown;
                continue;
            }
            let post_call = cfgs[site.caller.contract].post_call_block(site.caller.block);
            for c in &callees {
                call_edges.push(CrossEdge {
                    site: si,
                    from: site.caller,
                    to: NodeRef { contract: c.contract, block: c.entry_block },
                });
                let Some(post) = post_call else { continue };
                let callee = &cfgs[c.contract];
                for &m in &callee.functions[c.function].member_blocks {
                    if callee.last_instruction(m).spec().is_frame_exit() {
                        return_edges.push(CrossEdge {
                            site: si,
                            from: NodeRef { contract: c.contract, block: m },
                            to: NodeRef { contract: site.caller.contract, block: post },
                        });
                    }
                }
            }
            site.ambiguous = callees.len() > 1;
            site.resolution = Resolution::Matched(callees);
        }
    }
    LinkedCfg { contracts: cfgs, call_sites, call_edges, return_edges }
}

/// Counts of call sites by resolution class. Ambiguous sites are not counted as matched.
pub fn link_report(linked: &LinkedCfg) -> LinkSummary {
    let mut s = LinkSummary {
        call_edges: linked.call_edges.len(),
        return_edges: linked.return_edges.len(),
        ..LinkSummary::default()
    };
    for site in &linked.call_sites {
        match &site.resolution {
            Resolution::Unresolved => s.unresolved += 1,
            Resolution::ExternalUnknown => s.unknown += 1,
            Resolution::Matched(_) if site.ambiguous => s.ambiguous += 1,
            Resolution::Matched(_) => s.matched += 1,
        }
    }
    s
}

impl LinkedCfg {
    pub fn contract_index(&self, contract_id: &str) -> Option<usize> {
        self.contracts.iter().position(|c| c.contract_id == contract_id)
    }

    pub fn block_count(&self) -> usize {
        self.contracts.iter().map(|c| c.blocks.len()).sum()
    }

    /// Call edges leaving `node`.
    pub fn calls_from(&self, node: NodeRef) -> impl Iterator<Item = &CrossEdge> {
        self.call_edges.iter().filter(move |e| e.from == node)
    }

    /// Return edges of `site` leaving `node`.
    pub fn returns_from(&self, node: NodeRef, site: usize) -> impl Iterator<Item = &CrossEdge> {
        self.return_edges
            .iter()
            .filter(move |e| e.from == node && e.site == site)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::cfg::ContractCfg;

    fn cfg(id: &str, src: &str) -> ContractCfg {
        ContractCfg::build(id, &assemble(src).unwrap())
    }

    const CALL_ARGS: &str = "PUSH1 0 PUSH1 0 PUSH1 0x24 PUSH1 0 PUSH1 0 PUSH20 0x01 GAS";

    #[test]
    fn erc20_transfer_stub() {
        let src = alloc::format!(
            "PUSH4 0xa9059cbb PUSH1 0xe0 SHL PUSH1 0 MSTORE {CALL_ARGS} CALL POP STOP"
        );
        let sites = find_call_sites(&cfg("a", &src));
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].staged_selector, Some(Selector(0xa9059cbb)));
    }

    #[test]
    fn staticcall_without_push4() {
        let src = "PUSH1 0 PUSH1 0 PUSH1 0 PUSH1 0 PUSH20 0x01 GAS STATICCALL STOP";
        let sites = find_call_sites(&cfg("a", src));
        assert_eq!(sites.len(), 1);
        assert_eq!(sites[0].staged_selector, None);
        assert_eq!(sites[0].call_opcode, isa::STATICCALL);
    }

    #[test]
    fn two_calls_have_their_own_selectors() {
        let src = alloc::format!(
            "PUSH4 0x11111111 POP {CALL_ARGS} CALL POP
             PUSH4 0x22222222 POP {CALL_ARGS} CALL POP STOP"
        );
        let sites = find_call_sites(&cfg("a", &src));
        let sels: Vec<_> = sites.iter().map(|s| s.staged_selector).collect();
        assert_eq!(sels, [Some(Selector(0x11111111)), Some(Selector(0x22222222))]);
    }

    #[test]
    fn backward_scan_stops_at_intervening_call() {
        // the second call's block has no PUSH4 and its unique predecessor ends in a call
        let src = alloc::format!("PUSH4 0x11111111 POP {CALL_ARGS} CALL POP {CALL_ARGS} CALL STOP");
        let sites = find_call_sites(&cfg("a", &src));
        assert_eq!(sites[1].staged_selector, None);
    }

    #[test]
    fn scan_climbs_unique_predecessors() {
        let src = alloc::format!(
            "PUSH4 0x33333333 PUSH2 @n JUMP @n: JUMPDEST {CALL_ARGS} CALL STOP"
        );
        let sites = find_call_sites(&cfg("a", &src));
        assert_eq!(sites[0].staged_selector, Some(Selector(0x33333333)));
    }

    #[test]
    fn mask_constant_is_not_a_selector() {
        let src = alloc::format!("PUSH4 0xabcdef01 PUSH4 0xffffffff AND POP {CALL_ARGS} CALL STOP");
        let sites = find_call_sites(&cfg("a", &src));
        assert_eq!(sites[0].staged_selector, Some(Selector(0xabcdef01)));
    }

    #[test]
    fn empty_link_report_is_zero() {
        assert_eq!(link_report(&link(Vec::new())), LinkSummary::default());
    }
}
