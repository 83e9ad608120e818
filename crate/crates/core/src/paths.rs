//! Bounded depth-first enumeration of data paths through a linked CFG.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cfg::{BlockId, EdgeKind, Selector};
use crate::isa::{self, Instruction};
use crate::link::{LinkedCfg, NodeRef, Resolution};
use crate::symstack::{SymStack, SymValue, Symbols};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathBounds {
    /// Per block, per path.
    pub max_block_visits: usize,
    /// In instructions.
    pub max_path_length: usize,
    pub max_paths_per_entry: usize,
}

impl Default for PathBounds {
    fn default() -> Self {
        PathBounds { max_block_visits: 2, max_path_length: 4096, max_paths_per_entry: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathOptions {
    pub bounds: PathBounds,
    /// Follow unresolved JUMP/JUMPI targets that the symbolic stack knows concretely.
    pub resolve_dynamic_jumps: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions { bounds: PathBounds::default(), resolve_dynamic_jumps: true }
    }
}

impl From<PathBounds> for PathOptions {
    fn from(bounds: PathBounds) -> Self {
        PathOptions { bounds, ..PathOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub contract: usize,
    pub contract_id: String,
    pub block: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub contract: usize,
    #[serde(flatten)]
    pub ins: Instruction,
}

/// Transition into the block starting at step `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEdge {
    pub at: usize,
    pub kind: EdgeKind,
    /// Discovered from the symbolic stack during the walk rather than by static resolution.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub dynamic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingKind {
    Call,
    Return,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crossing {
    pub at: usize,
    pub kind: CrossingKind,
    pub site: usize,
    pub staged_selector: Option<Selector>,
    pub callee_selector: Option<Selector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPath {
    pub entry: PathEntry,
    pub steps: Vec<PathStep>,
    pub edges: Vec<PathEdge>,
    pub crossings: Vec<Crossing>,
    pub truncated: bool,
}

impl DataPath {
    pub fn mnemonics(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.steps.iter().map(|s| s.ins.mnemonic())
    }

    pub fn opcodes(&self) -> impl Iterator<Item = u8> + '_ {
        self.steps.iter().map(|s| s.ins.opcode)
    }

    /// Blocks visited, in order, recovered from the edge boundaries.
    pub fn block_starts(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if let Some(first) = self.steps.first() {
            out.push((first.contract, first.ins.pc));
        }
        for e in &self.edges {
            let s = &self.steps[e.at.min(self.steps.len() - 1)];
            out.push((s.contract, s.ins.pc));
        }
        out
    }
}

/// Entry blocks of every function segment (selector-bearing and fallback), per
/// contract in order, deduplicated.
pub fn entries_for_protocol(linked: &LinkedCfg) -> Vec<NodeRef> {
    let mut out: Vec<NodeRef> = Vec::new();
    for (ci, c) in linked.contracts.iter().enumerate() {
        for f in &c.functions {
            let n = NodeRef { contract: ci, block: f.entry_block };
            if !out.contains(&n) {
                out.push(n);
            }
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Succ {
    node: NodeRef,
    kind: EdgeKind,
    dynamic: bool,
    cross: Option<(CrossingKind, usize)>,
}

#[derive(Clone, Copy)]
struct Frame {
    site: usize,
}

struct Walker<'a> {
    linked: &'a LinkedCfg,
    opts: PathOptions,
    entry: PathEntry,
    visits: Vec<Vec<u32>>,
    steps: Vec<PathStep>,
    edges: Vec<PathEdge>,
    crossings: Vec<Crossing>,
    calls: Vec<Frame>,
    out: Vec<DataPath>,
}

/// Symbolic state carried along the walk to discover dynamic jump targets.
#[derive(Clone)]
struct Tracker {
    frames: Vec<SymStack>,
    symbols: Symbols,
}

impl Tracker {
    fn new() -> Tracker {
        Tracker { frames: vec![SymStack::new()], symbols: Symbols::default() }
    }
}

impl<'a> Walker<'a> {
    fn done(&self) -> bool {
        self.out.len() >= self.opts.bounds.max_paths_per_entry
    }

    fn emit(&mut self, truncated: bool) {
        let max = self.opts.bounds.max_path_length;
        let mut steps = self.steps.clone();
        let mut edges = self.edges.clone();
        let mut crossings = self.crossings.clone();
        let cut = steps.len() > max;
        if cut {
            steps.truncate(max);
            edges.retain(|e| e.at < max);
            crossings.retain(|c| c.at < max);
        }
        self.out.push(DataPath {
            entry: self.entry.clone(),
            steps,
            edges,
            crossings,
            truncated: truncated || cut,
        });
    }

    /// Run the block through the tracker; returns the concrete jump target popped by a
    /// trailing JUMP/JUMPI, if known.
    fn track(&self, tracker: &mut Option<Tracker>, node: NodeRef) -> Option<usize> {
        let t = tracker.as_mut()?;
        let cfg = &self.linked.contracts[node.contract];
        let mut target = None;
        let mut failed = false;
        {
            let stack = t.frames.last_mut().unwrap();
            for ins in cfg.block_instructions(node.block) {
                if matches!(ins.opcode, isa::JUMP | isa::JUMPI) {
                    target = match stack.peek(0) {
                        Some(SymValue::Concrete(w)) => w.to_usize(),
                        _ => None,
                    };
                }
                if stack.step(ins, &mut t.symbols).is_err() {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            *tracker = None;
            return None;
        }
        target
    }

    fn successors(&self, node: NodeRef, dyn_target: Option<usize>) -> Vec<Succ> {
        let cfg = &self.linked.contracts[node.contract];
        let last = cfg.last_instruction(node.block).spec();
        if last.is_call {
            let mut calls: Vec<Succ> = self
                .linked
                .calls_from(node)
                .map(|e| Succ {
                    node: e.to,
                    kind: EdgeKind::Call,
                    dynamic: false,
                    cross: Some((CrossingKind::Call, e.site)),
                })
                .collect();
            if !calls.is_empty() {
                calls.sort_by_key(|s| (self.linked.contracts[s.node.contract].contract_id.as_str(), s.node.block));
                return calls;
            }
        }
        if last.is_frame_exit() {
            if let Some(top) = self.calls.last() {
                return self
                    .linked
                    .returns_from(node, top.site)
                    .map(|e| Succ {
                        node: e.to,
                        kind: EdgeKind::Return,
                        dynamic: false,
                        cross: Some((CrossingKind::Return, e.site)),
                    })
                    .collect();
            }
        }
        let block = &cfg.blocks[node.block];
        let mut out: Vec<Succ> = block
            .successors
            .iter()
            .map(|e| Succ {
                node: NodeRef { contract: node.contract, block: e.target },
                kind: e.kind,
                dynamic: false,
                cross: None,
            })
            .collect();
        if self.opts.resolve_dynamic_jumps && cfg.unresolved_jumps.binary_search(&node.block).is_ok() {
            let target = dyn_target
                .and_then(|pc| cfg.block_at_pc(pc))
                .filter(|&t| cfg.block_instructions(t)[0].spec().is_jumpdest);
            if let Some(t) = target {
                let kind = if last.byte == isa::JUMPI { EdgeKind::BranchTaken } else { EdgeKind::Jump };
                out.push(Succ {
                    node: NodeRef { contract: node.contract, block: t },
                    kind,
                    dynamic: true,
                    cross: None,
                });
                out.sort_by_key(|s| (s.kind, s.node.block));
            }
        }
        out
    }

    fn visit(&mut self, node: NodeRef, mut tracker: Option<Tracker>) {
        let cfg = &self.linked.contracts[node.contract];
        self.visits[node.contract][node.block] += 1;
        let mark = self.steps.len();
        self.steps.extend(
            cfg.block_instructions(node.block)
                .iter()
                .map(|ins| PathStep { contract: node.contract, ins: ins.clone() }),
        );

        let dyn_target = self.track(&mut tracker, node);
        let succs = self.successors(node, dyn_target);
        let bounds = self.opts.bounds;
        let allowed: Vec<Succ> = succs
            .iter()
            .copied()
            .filter(|s| {
                self.steps.len() < bounds.max_path_length
                    && (self.visits[s.node.contract][s.node.block] as usize) < bounds.max_block_visits
            })
            .collect();

        if succs.is_empty() {
            self.emit(false);
        } else if allowed.is_empty() {
            self.emit(true);
        } else {
            for s in allowed {
                if self.done() {
                    break;
                }
                self.take(s, &tracker);
            }
        }

        self.steps.truncate(mark);
        self.visits[node.contract][node.block] -= 1;
    }

    fn take(&mut self, s: Succ, tracker: &Option<Tracker>) {
        let at = self.steps.len();
        self.edges.push(PathEdge { at, kind: s.kind, dynamic: s.dynamic });
        let mut next_tracker = tracker.clone();
        let mut popped = None;
        if let Some((kind, site)) = s.cross {
            let call_site = &self.linked.call_sites[site];
            let callee_selector = match &call_site.resolution {
                Resolution::Matched(callees) => callees
                    .iter()
                    .find(|c| match kind {
                        CrossingKind::Call => c.contract == s.node.contract && c.entry_block == s.node.block,
                        CrossingKind::Return => true,
                    })
                    .map(|c| c.selector),
                _ => None,
            };
            self.crossings.push(Crossing {
                at,
                kind,
                site,
                staged_selector: call_site.staged_selector,
                callee_selector,
            });
            match kind {
                CrossingKind::Call => {
                    self.calls.push(Frame { site });
                    if let Some(t) = next_tracker.as_mut() {
                        t.frames.push(SymStack::new());
                    }
                }
                CrossingKind::Return => {
                    popped = self.calls.pop();
                    if let Some(t) = next_tracker.as_mut() {
                        if t.frames.len() > 1 {
                            t.frames.pop();
                        }
                    }
                }
            }
        }

        self.visit(s.node, next_tracker);

        match s.cross.map(|c| c.0) {
            Some(CrossingKind::Call) => {
                self.calls.pop();
            }
            Some(CrossingKind::Return) => {
                if let Some(f) = popped {
                    self.calls.push(f);
                }
            }
            None => {}
        }
        if s.cross.is_some() {
            self.crossings.pop();
        }
        self.edges.pop();
    }
}

pub fn enumerate_paths(linked: &LinkedCfg, entry: NodeRef, bounds: PathBounds) -> Vec<DataPath> {
    enumerate_paths_with(linked, entry, bounds.into())
}

/// Depth-first enumeration of maximal bounded walks from `entry`.
///
/// A walk ends when its last block has no successors (complete) or every
/// successor is excluded by a bound (truncated). Successors are visited by edge
/// kind, then target. Return edges are only taken back to the site whose call edge
/// is on top of the walk's call stack, and a matched call site is left through its
/// call edges rather than its fallthrough.
pub fn enumerate_paths_with(linked: &LinkedCfg, entry: NodeRef, opts: PathOptions) -> Vec<DataPath> {
    let b = opts.bounds;
    assert!(b.max_block_visits >= 1 && b.max_path_length >= 1 && b.max_paths_per_entry >= 1);
    let mut w = Walker {
        linked,
        opts,
        entry: PathEntry {
            contract: entry.contract,
            contract_id: linked.contracts[entry.contract].contract_id.clone(),
            block: entry.block,
        },
        visits: linked.contracts.iter().map(|c| vec![0; c.blocks.len()]).collect(),
        steps: Vec::new(),
        edges: Vec::new(),
        crossings: Vec::new(),
        calls: Vec::new(),
        out: Vec::new(),
    };
    let tracker = opts.resolve_dynamic_jumps.then(Tracker::new);
    w.visit(entry, tracker);
    w.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::assemble;
    use crate::cfg::ContractCfg;
    use crate::link::link;

    fn single(src: &str) -> LinkedCfg {
        link(vec![ContractCfg::build("t", &assemble(src).unwrap())])
    }

    const ENTRY: NodeRef = NodeRef { contract: 0, block: 0 };

    #[test]
    fn linear_cfg_has_one_path() {
        let l = single("PUSH2 @a JUMP @a: JUMPDEST PUSH2 @b JUMP @b: JUMPDEST STOP");
        assert_eq!(l.contracts[0].blocks.len(), 3);
        let p = enumerate_paths(&l, ENTRY, PathBounds::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].block_starts().len(), 3);
        assert!(!p[0].truncated);
    }

    #[test]
    fn diamond_has_two_paths() {
        let l = single(
            "PUSH1 1 PUSH2 @b JUMPI PUSH2 @j JUMP @b: JUMPDEST PUSH2 @j JUMP @j: JUMPDEST STOP",
        );
        let p = enumerate_paths(&l, ENTRY, PathBounds::default());
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].edges[0].kind, EdgeKind::Fallthrough);
        assert_eq!(p[1].edges[0].kind, EdgeKind::BranchTaken);
    }

    #[test]
    fn self_loop_is_bounded() {
        let l = single("@l: JUMPDEST PUSH2 @l JUMP");
        let bounds = PathBounds { max_block_visits: 2, ..PathBounds::default() };
        let p = enumerate_paths(&l, ENTRY, bounds);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].block_starts(), [(0, 0), (0, 0)]);
        assert!(p[0].truncated);
    }

    #[test]
    fn length_bound_cuts_path() {
        let l = single("PUSH1 1 PUSH1 2 ADD POP STOP");
        let bounds = PathBounds { max_path_length: 3, ..PathBounds::default() };
        let p = enumerate_paths(&l, ENTRY, bounds);
        assert_eq!(p[0].steps.len(), 3);
        assert!(p[0].truncated);
    }

    #[test]
    fn paths_per_entry_cap_is_prefix_stable() {
        let l = single(
            "PUSH1 1 PUSH2 @a JUMPI JUMPDEST PUSH1 1 PUSH2 @b JUMPI JUMPDEST STOP
             @a: JUMPDEST STOP @b: JUMPDEST STOP",
        );
        let all = enumerate_paths(&l, ENTRY, PathBounds::default());
        assert_eq!(all.len(), 3);
        for cap in 1..=3 {
            let some = enumerate_paths(&l, ENTRY, PathBounds { max_paths_per_entry: cap, ..PathBounds::default() });
            assert_eq!(some[..], all[..cap]);
        }
    }

    #[test]
    fn dynamic_jump_is_followed_when_concrete() {
        // return address pushed well before the jump: not resolvable by the CFG builder
        let src = "PUSH2 @ret PUSH2 @f JUMP @f: JUMPDEST PUSH1 1 POP JUMP @ret: JUMPDEST STOP";
        let l = single(src);
        assert_eq!(l.contracts[0].unresolved_jumps.len(), 1);
        let p = enumerate_paths(&l, ENTRY, PathBounds::default());
        assert_eq!(p.len(), 1);
        assert!(p[0].edges.iter().any(|e| e.dynamic));
        let off = enumerate_paths_with(
            &l,
            ENTRY,
            PathOptions { resolve_dynamic_jumps: false, ..PathOptions::default() },
        );
        assert_eq!(off[0].edges.len(), 1);
        assert!(!off[0].truncated);
    }

    #[test]
    fn entries_cover_segments() {
        let l = single(
            "PUSH1 0 CALLDATALOAD PUSH1 0xe0 SHR
             DUP1 PUSH4 0x11111111 EQ PUSH2 @a JUMPI
             DUP1 PUSH4 0x22222222 EQ PUSH2 @b JUMPI
             PUSH1 0 DUP1 REVERT
             @a: JUMPDEST STOP @b: JUMPDEST STOP",
        );
        assert_eq!(entries_for_protocol(&l).len(), 3);
        let l = single("PUSH1 1 POP STOP");
        assert_eq!(entries_for_protocol(&l), [ENTRY]);
    }
}
