//! Per-contract control-flow graphs: basic blocks, static jump resolution and
//! selector-keyed function segmentation.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::isa::{self, decode_bytecode, Instruction};

pub type BlockId = usize;

/// A 4-byte function selector. Serialized as `0x` plus eight hex digits.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Selector(pub u32);

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08x}", self.0)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:08x}", self.0)
    }
}

impl Serialize for Selector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Selector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Selector, D::Error> {
        let s = <String as Deserialize>::deserialize(d)?;
        let digits = s.strip_prefix("0x").unwrap_or(&s);
        u32::from_str_radix(digits, 16)
            .map(Selector)
            .map_err(serde::de::Error::custom)
    }
}

/// Edge kinds, in the order successors are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Fallthrough,
    Jump,
    BranchTaken,
    Call,
    Return,
    CrossContract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub target: BlockId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: BlockId,
    pub start_pc: usize,
    /// pc of the last instruction in the block.
    pub end_pc: usize,
    /// Index range into the contract's instruction list.
    pub instructions: Range<usize>,
    pub successors: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSegment {
    pub selector: Option<Selector>,
    pub entry_block: BlockId,
    pub member_blocks: Vec<BlockId>,
    pub is_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractCfg {
    pub contract_id: String,
    pub instructions: Vec<Instruction>,
    pub blocks: Vec<BasicBlock>,
    pub functions: Vec<FunctionSegment>,
    pub unresolved_jumps: Vec<BlockId>,
}

fn is_leader_boundary(prev: &Instruction) -> bool {
    prev.spec().ends_block()
}

/// Split instructions into basic blocks.
///
/// Leaders are pc 0, every JUMPDEST, and the instruction after a terminator, JUMPI
/// or call-family opcode. Blocks that do not end in a terminator or JUMPI get a
/// fallthrough edge to the next block; JUMPI edges are added by [`resolve_jumps`].
pub fn build_blocks(instructions: &[Instruction]) -> Vec<BasicBlock> {
    let mut starts = Vec::new();
    for (i, ins) in instructions.iter().enumerate() {
        let leader = i == 0 || ins.spec().is_jumpdest || is_leader_boundary(&instructions[i - 1]);
        if leader {
            starts.push(i);
        }
    }
    let mut blocks: Vec<BasicBlock> = starts
        .iter()
        .enumerate()
        .map(|(id, &first)| {
            let end = starts.get(id + 1).copied().unwrap_or(instructions.len());
            BasicBlock {
                id,
                start_pc: instructions[first].pc,
                end_pc: instructions[end - 1].pc,
                instructions: first..end,
                successors: Vec::new(),
            }
        })
        .collect();
    let n = blocks.len();
    for b in blocks.iter_mut() {
        let last = instructions[b.instructions.end - 1].spec();
        if !last.is_terminator && last.byte != isa::JUMPI && b.id + 1 < n {
            b.successors.push(Edge { kind: EdgeKind::Fallthrough, target: b.id + 1 });
        }
    }
    blocks
}

fn block_at_pc(blocks: &[BasicBlock], pc: usize) -> Option<BlockId> {
    blocks.binary_search_by_key(&pc, |b| b.start_pc).ok()
}

/// Add jump and branch edges where the target is a constant pushed immediately
/// before the JUMP/JUMPI and lands on a JUMPDEST. Returns the blocks whose target
/// could not be determined.
pub fn resolve_jumps(instructions: &[Instruction], blocks: &mut [BasicBlock]) -> Vec<BlockId> {
    let mut unresolved = Vec::new();
    let n = blocks.len();
    for id in 0..n {
        let range = blocks[id].instructions.clone();
        let last = &instructions[range.end - 1];
        let kind = match last.opcode {
            isa::JUMP => EdgeKind::Jump,
            isa::JUMPI => EdgeKind::BranchTaken,
            _ => continue,
        };
        if last.opcode == isa::JUMPI && id + 1 < n {
            blocks[id].successors.push(Edge { kind: EdgeKind::Fallthrough, target: id + 1 });
        }
        let target = (range.len() >= 2)
            .then(|| instructions[range.end - 2].push_value())
            .flatten()
            .and_then(|w| w.to_usize())
            .and_then(|pc| block_at_pc(blocks, pc))
            .filter(|&t| instructions[blocks[t].instructions.start].spec().is_jumpdest);
        match target {
            Some(t) => blocks[id].successors.push(Edge { kind, target: t }),
            None => unresolved.push(id),
        }
    }
    for b in blocks.iter_mut() {
        b.successors.sort();
        b.successors.dedup();
    }
    unresolved
}

fn is_dispatcher_op(op: u8) -> bool {
    let s = isa::spec(op);
    s.is_push()
        || s.dup_depth().is_some()
        || s.swap_depth().is_some()
        || matches!(
            op,
            0x04 // DIV
            | 0x03 // SUB
            | 0x10..=0x1d // comparisons and bit ops
            | 0x34 // CALLVALUE
            | 0x35 // CALLDATALOAD
            | 0x36 // CALLDATASIZE
            | isa::POP
            | isa::MSTORE
            | isa::JUMP
            | isa::JUMPI
            | isa::JUMPDEST
        )
}

/// Match `PUSH4 sel, [DUPn,] EQ, PUSHn target, JUMPI` at the end of a block.
fn selector_match(cfg: &ContractCfg, block: &BasicBlock) -> Option<(Selector, BlockId)> {
    let ins = &cfg.instructions[block.instructions.clone()];
    let n = ins.len();
    if n < 4 || ins[n - 1].opcode != isa::JUMPI || ins[n - 3].opcode != isa::EQ {
        return None;
    }
    ins[n - 2].push_value()?;
    let push4 = if ins[n - 4].opcode == isa::PUSH4 {
        &ins[n - 4]
    } else if n >= 5 && ins[n - 4].spec().dup_depth().is_some() && ins[n - 5].opcode == isa::PUSH4 {
        &ins[n - 5]
    } else {
        return None;
    };
    let sel = Selector(push4.push_value()?.low_u32());
    let target = block
        .successors
        .iter()
        .find(|e| e.kind == EdgeKind::BranchTaken)?
        .target;
    Some((sel, target))
}

/// Forward closure of `entry` over intra-contract edges.
pub fn forward_closure(blocks: &[BasicBlock], entry: BlockId) -> Vec<BlockId> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![entry];
    while let Some(b) = stack.pop() {
        if seen.insert(b) {
            stack.extend(blocks[b].successors.iter().map(|e| e.target));
        }
    }
    seen.into_iter().collect()
}

/// Recover ABI function segments from the selector dispatcher.
///
/// The dispatcher region is explored breadth-first from block 0 through blocks made
/// only of dispatcher-style instructions; a block ending in the selector pattern
/// contributes a segment and continues only through its fallthrough. The
/// fallthrough of the last matching block (highest pc) is the fallback segment.
pub fn segment_functions(cfg: &ContractCfg) -> Vec<FunctionSegment> {
    let blocks = &cfg.blocks;
    if blocks.is_empty() {
        return Vec::new();
    }
    let mut found: Vec<(Selector, BlockId)> = Vec::new();
    let mut last_match: Option<BlockId> = None;
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(b) = queue.pop_front() {
        if !seen.insert(b) {
            continue;
        }
        let block = &blocks[b];
        if let Some((sel, target)) = selector_match(cfg, block) {
            if !found.iter().any(|(s, _)| *s == sel) {
                found.push((sel, target));
            }
            last_match = Some(last_match.map_or(b, |m: BlockId| m.max(b)));
            queue.extend(
                block
                    .successors
                    .iter()
                    .filter(|e| e.kind == EdgeKind::Fallthrough)
                    .map(|e| e.target),
            );
            continue;
        }
        let plain = cfg.instructions[block.instructions.clone()]
            .iter()
            .all(|i| is_dispatcher_op(i.opcode));
        if plain {
            queue.extend(block.successors.iter().map(|e| e.target));
        }
    }

    if found.is_empty() {
        return vec![FunctionSegment {
            selector: None,
            entry_block: 0,
            member_blocks: forward_closure(blocks, 0),
            is_fallback: false,
        }];
    }
    let mut segments: Vec<FunctionSegment> = found
        .into_iter()
        .map(|(sel, entry)| FunctionSegment {
            selector: Some(sel),
            entry_block: entry,
            member_blocks: forward_closure(blocks, entry),
            is_fallback: false,
        })
        .collect();
    let fallback = last_match.and_then(|m| {
        blocks[m]
            .successors
            .iter()
            .find(|e| e.kind == EdgeKind::Fallthrough)
            .map(|e| e.target)
    });
    if let Some(entry) = fallback {
        segments.push(FunctionSegment {
            selector: None,
            entry_block: entry,
            member_blocks: forward_closure(blocks, entry),
            is_fallback: true,
        });
    }
    segments
}

impl ContractCfg {
    /// Decode `code` and build blocks, edges and function segments.
    pub fn build(contract_id: impl Into<String>, code: &[u8]) -> ContractCfg {
        Self::from_instructions(contract_id, decode_bytecode(code))
    }

    pub fn from_instructions(contract_id: impl Into<String>, instructions: Vec<Instruction>) -> ContractCfg {
        let mut blocks = build_blocks(&instructions);
        let unresolved_jumps = resolve_jumps(&instructions, &mut blocks);
        let mut cfg = ContractCfg {
            contract_id: contract_id.into(),
            instructions,
            blocks,
            functions: Vec::new(),
            unresolved_jumps,
        };
        cfg.functions = segment_functions(&cfg);
        cfg
    }

    pub fn block_instructions(&self, id: BlockId) -> &[Instruction] {
        &self.instructions[self.blocks[id].instructions.clone()]
    }

    pub fn last_instruction(&self, id: BlockId) -> &Instruction {
        &self.instructions[self.blocks[id].instructions.end - 1]
    }

    pub fn block_at_pc(&self, pc: usize) -> Option<BlockId> {
        block_at_pc(&self.blocks, pc)
    }

    /// Intra-contract predecessor lists, sorted.
    pub fn predecessors(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for b in &self.blocks {
            for e in &b.successors {
                preds[e.target].push(b.id);
            }
        }
        for p in preds.iter_mut() {
            p.sort_unstable();
            p.dedup();
        }
        preds
    }

    /// The block control reaches after a call-family terminator returns.
    pub fn post_call_block(&self, id: BlockId) -> Option<BlockId> {
        self.blocks[id]
            .successors
            .iter()
            .find(|e| e.kind == EdgeKind::Fallthrough)
            .map(|e| e.target)
    }
}
