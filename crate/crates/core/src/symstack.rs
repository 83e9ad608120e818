//! Symbolic execution stack used to decide whether a data path is feasible.
//!
//! PUSH/DUP/SWAP/POP move concrete words around and AND folds two concrete words;
//! every other result is a fresh placeholder symbol. Jump targets, stack height
//! bounds and selector consistency at call crossings are checked along the path.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cfg::EdgeKind;
use crate::isa::{self, Instruction};
use crate::paths::{CrossingKind, DataPath};
use crate::word::Word;

pub const MAX_STACK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymValue {
    Concrete(Word),
    Symbol(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error("stack underflow at pc {0:#x}")]
    Underflow(usize),
    #[error("stack overflow at pc {0:#x}")]
    Overflow(usize),
}

/// Fresh-symbol source shared by every frame of one validation run.
#[derive(Debug, Default, Clone)]
pub struct Symbols {
    next: u64,
}

impl Symbols {
    pub fn fresh(&mut self) -> SymValue {
        let id = self.next;
        self.next += 1;
        SymValue::Symbol(id)
    }
}

/// Top of stack is the last item.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymStack {
    pub items: Vec<SymValue>,
}

impl SymStack {
    pub fn new() -> Self {
        SymStack::default()
    }

    pub fn height(&self) -> usize {
        self.items.len()
    }

    /// The `depth`-th item from the top (0 = top).
    pub fn peek(&self, depth: usize) -> Option<SymValue> {
        self.items.len().checked_sub(depth + 1).map(|i| self.items[i])
    }

    /// Apply one instruction.
    pub fn step(&mut self, ins: &Instruction, symbols: &mut Symbols) -> Result<(), StepError> {
        let spec = ins.spec();
        let (pops, pushes) = isa::stack_effect(spec);
        let h = self.items.len();
        if h < pops {
            return Err(StepError::Underflow(ins.pc));
        }
        if h - pops + pushes > MAX_STACK {
            return Err(StepError::Overflow(ins.pc));
        }
        if let Some(v) = ins.push_value() {
            self.items.push(SymValue::Concrete(v));
        } else if let Some(n) = spec.dup_depth() {
            let v = self.items[h - n];
            self.items.push(v);
        } else if let Some(n) = spec.swap_depth() {
            self.items.swap(h - 1, h - 1 - n);
        } else if spec.byte == isa::AND {
            let a = self.items.pop().unwrap();
            let b = self.items.pop().unwrap();
            let r = match (a, b) {
                (SymValue::Concrete(x), SymValue::Concrete(y)) => SymValue::Concrete(x & y),
                _ => symbols.fresh(),
            };
            self.items.push(r);
        } else {
            self.items.truncate(h - pops);
            for _ in 0..pushes {
                self.items.push(symbols.fresh());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Infeasible {
    Underflow { pc: usize },
    Overflow { pc: usize },
    BadJumpTarget { pc: usize, value: Word },
    JumpTargetSymbolic { pc: usize },
    SelectorMismatch { pc: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub feasible: bool,
    pub reason: Option<Infeasible>,
}

impl Verdict {
    pub const FEASIBLE: Verdict = Verdict { feasible: true, reason: None };

    fn rejected(reason: Infeasible) -> Verdict {
        Verdict { feasible: false, reason: Some(reason) }
    }
}

impl From<StepError> for Infeasible {
    fn from(e: StepError) -> Self {
        match e {
            StepError::Underflow(pc) => Infeasible::Underflow { pc },
            StepError::Overflow(pc) => Infeasible::Overflow { pc },
        }
    }
}

struct Frame {
    stack: SymStack,
    last_push4: Option<u32>,
}

impl Frame {
    fn new() -> Frame {
        Frame { stack: SymStack::new(), last_push4: None }
    }
}

pub fn validate_path(path: &DataPath) -> Verdict {
    validate_path_traced(path).0
}

/// Validate and also return the stack height after every executed step of the
/// current frame. Heights stop at the first rejection.
pub fn validate_path_traced(path: &DataPath) -> (Verdict, Vec<usize>) {
    let mut heights = Vec::with_capacity(path.steps.len());
    let mut symbols = Symbols::default();
    let mut frames = alloc::vec![Frame::new()];
    let mut edges = path.edges.iter().peekable();
    let mut crossings = path.crossings.iter().peekable();

    for (k, step) in path.steps.iter().enumerate() {
        let ins = &step.ins;
        // transition leaving this step, if the next step starts a new block
        while edges.peek().is_some_and(|e| e.at <= k) {
            edges.next();
        }
        let leaving = edges.peek().filter(|e| e.at == k + 1).copied();
        while crossings.peek().is_some_and(|c| c.at <= k) {
            crossings.next();
        }
        let crossing = crossings.peek().filter(|c| c.at == k + 1).copied();
        let frame = frames.last_mut().unwrap();

        if matches!(ins.opcode, isa::JUMP | isa::JUMPI) {
            let taken = leaving.filter(|e| matches!(e.kind, EdgeKind::Jump | EdgeKind::BranchTaken));
            if let (Some(edge), Some(top)) = (taken, frame.stack.peek(0)) {
                let next = &path.steps[k + 1];
                match top {
                    SymValue::Concrete(v) => {
                        let lands = v.to_usize() == Some(next.ins.pc)
                            && next.contract == step.contract
                            && next.ins.spec().is_jumpdest;
                        if !lands {
                            return (Verdict::rejected(Infeasible::BadJumpTarget { pc: ins.pc, value: v }), heights);
                        }
                    }
                    SymValue::Symbol(_) if edge.dynamic => {
                        return (Verdict::rejected(Infeasible::JumpTargetSymbolic { pc: ins.pc }), heights);
                    }
                    SymValue::Symbol(_) => {}
                }
            }
        }

        if let Some(c) = crossing.filter(|c| c.kind == CrossingKind::Call) {
            if let (Some(_), Some(callee)) = (c.staged_selector, c.callee_selector) {
                if frame.last_push4.is_some_and(|p| p != callee.0) {
                    return (Verdict::rejected(Infeasible::SelectorMismatch { pc: ins.pc }), heights);
                }
            }
        }

        if let Err(e) = frame.stack.step(ins, &mut symbols) {
            return (Verdict::rejected(e.into()), heights);
        }
        if ins.opcode == isa::PUSH4 {
            let v = ins.push_value().unwrap().low_u32();
            if v != 0xffff_ffff {
                frame.last_push4 = Some(v);
            }
        }
        heights.push(frame.stack.height());

        match crossing.map(|c| c.kind) {
            Some(CrossingKind::Call) => frames.push(Frame::new()),
            Some(CrossingKind::Return) => {
                if frames.len() > 1 {
                    frames.pop();
                } else {
                    frames[0] = Frame::new();
                }
            }
            None => {}
        }
    }
    (Verdict::FEASIBLE, heights)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position in the input list.
    pub index: usize,
    pub reason: Infeasible,
}

/// Keep feasible paths in input order. `bypass` (the no-validation ablation)
/// keeps everything.
pub fn filter_feasible(paths: Vec<DataPath>, bypass: bool) -> (Vec<DataPath>, Vec<Rejection>) {
    if bypass {
        return (paths, Vec::new());
    }
    let mut kept = Vec::with_capacity(paths.len());
    let mut rejected = Vec::new();
    for (index, p) in paths.into_iter().enumerate() {
        match validate_path(&p).reason {
            None => kept.push(p),
            Some(reason) => rejected.push(Rejection { index, reason }),
        }
    }
    (kept, rejected)
}
