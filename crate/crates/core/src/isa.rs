//! EVM instruction set (Shanghai, including `PUSH0`) and a positional disassembler.
//!
//! Every byte value maps to exactly one [`OpcodeSpec`]. Bytes without a defined
//! opcode decode to an `INVALID` terminator with no stack effect.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::word::Word;

/// Static description of one opcode byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpcodeSpec {
    pub byte: u8,
    pub mnemonic: &'static str,
    pub immediate_width: u8,
    pub pops: u8,
    pub pushes: u8,
    pub is_terminator: bool,
    pub is_call: bool,
    pub is_jumpdest: bool,
    /// False for bytes that have no opcode assigned.
    pub defined: bool,
}

pub const STOP: u8 = 0x00;
pub const ADD: u8 = 0x01;
pub const EQ: u8 = 0x14;
pub const ISZERO: u8 = 0x15;
pub const AND: u8 = 0x16;
pub const POP: u8 = 0x50;
pub const MLOAD: u8 = 0x51;
pub const MSTORE: u8 = 0x52;
pub const JUMP: u8 = 0x56;
pub const JUMPI: u8 = 0x57;
pub const JUMPDEST: u8 = 0x5b;
pub const PUSH0: u8 = 0x5f;
pub const PUSH1: u8 = 0x60;
pub const PUSH4: u8 = 0x63;
pub const PUSH32: u8 = 0x7f;
pub const DUP1: u8 = 0x80;
pub const DUP16: u8 = 0x8f;
pub const SWAP1: u8 = 0x90;
pub const SWAP16: u8 = 0x9f;
pub const CALL: u8 = 0xf1;
pub const CALLCODE: u8 = 0xf2;
pub const RETURN: u8 = 0xf3;
pub const DELEGATECALL: u8 = 0xf4;
pub const STATICCALL: u8 = 0xfa;
pub const REVERT: u8 = 0xfd;
pub const INVALID: u8 = 0xfe;
pub const SELFDESTRUCT: u8 = 0xff;

const fn undefined(byte: u8) -> OpcodeSpec {
    OpcodeSpec {
        byte,
        mnemonic: "INVALID",
        immediate_width: 0,
        pops: 0,
        pushes: 0,
        is_terminator: true,
        is_call: false,
        is_jumpdest: false,
        defined: false,
    }
}

const fn op(byte: u8, mnemonic: &'static str, pops: u8, pushes: u8) -> OpcodeSpec {
    OpcodeSpec {
        byte,
        mnemonic,
        immediate_width: 0,
        pops,
        pushes,
        is_terminator: matches!(byte, STOP | JUMP | RETURN | REVERT | INVALID | SELFDESTRUCT),
        is_call: matches!(byte, CALL | CALLCODE | DELEGATECALL | STATICCALL),
        is_jumpdest: byte == JUMPDEST,
        defined: true,
    }
}

#[rustfmt::skip]
const PUSH_NAMES: [&str; 32] = [
    "PUSH1", "PUSH2", "PUSH3", "PUSH4", "PUSH5", "PUSH6", "PUSH7", "PUSH8",
    "PUSH9", "PUSH10", "PUSH11", "PUSH12", "PUSH13", "PUSH14", "PUSH15", "PUSH16",
    "PUSH17", "PUSH18", "PUSH19", "PUSH20", "PUSH21", "PUSH22", "PUSH23", "PUSH24",
    "PUSH25", "PUSH26", "PUSH27", "PUSH28", "PUSH29", "PUSH30", "PUSH31", "PUSH32",
];

#[rustfmt::skip]
const DUP_NAMES: [&str; 16] = [
    "DUP1", "DUP2", "DUP3", "DUP4", "DUP5", "DUP6", "DUP7", "DUP8",
    "DUP9", "DUP10", "DUP11", "DUP12", "DUP13", "DUP14", "DUP15", "DUP16",
];

#[rustfmt::skip]
const SWAP_NAMES: [&str; 16] = [
    "SWAP1", "SWAP2", "SWAP3", "SWAP4", "SWAP5", "SWAP6", "SWAP7", "SWAP8",
    "SWAP9", "SWAP10", "SWAP11", "SWAP12", "SWAP13", "SWAP14", "SWAP15", "SWAP16",
];

const fn build_table() -> [OpcodeSpec; 256] {
    let mut t = [undefined(0); 256];
    let mut i = 0;
    while i < 256 {
        t[i] = undefined(i as u8);
        i += 1;
    }

    t[0x00] = op(0x00, "STOP", 0, 0);
    t[0x01] = op(0x01, "ADD", 2, 1);
    t[0x02] = op(0x02, "MUL", 2, 1);
    t[0x03] = op(0x03, "SUB", 2, 1);
    t[0x04] = op(0x04, "DIV", 2, 1);
    t[0x05] = op(0x05, "SDIV", 2, 1);
    t[0x06] = op(0x06, "MOD", 2, 1);
    t[0x07] = op(0x07, "SMOD", 2, 1);
    t[0x08] = op(0x08, "ADDMOD", 3, 1);
    t[0x09] = op(0x09, "MULMOD", 3, 1);
    t[0x0a] = op(0x0a, "EXP", 2, 1);
    t[0x0b] = op(0x0b, "SIGNEXTEND", 2, 1);

    t[0x10] = op(0x10, "LT", 2, 1);
    t[0x11] = op(0x11, "GT", 2, 1);
    t[0x12] = op(0x12, "SLT", 2, 1);
    t[0x13] = op(0x13, "SGT", 2, 1);
    t[0x14] = op(0x14, "EQ", 2, 1);
    t[0x15] = op(0x15, "ISZERO", 1, 1);
    t[0x16] = op(0x16, "AND", 2, 1);
    t[0x17] = op(0x17, "OR", 2, 1);
    t[0x18] = op(0x18, "XOR", 2, 1);
    t[0x19] = op(0x19, "NOT", 1, 1);
    t[0x1a] = op(0x1a, "BYTE", 2, 1);
    t[0x1b] = op(0x1b, "SHL", 2, 1);
    t[0x1c] = op(0x1c, "SHR", 2, 1);
    t[0x1d] = op(0x1d, "SAR", 2, 1);

    t[0x20] = op(0x20, "KECCAK256", 2, 1);

    t[0x30] = op(0x30, "ADDRESS", 0, 1);
    t[0x31] = op(0x31, "BALANCE", 1, 1);
    t[0x32] = op(0x32, "ORIGIN", 0, 1);
    t[0x33] = op(0x33, "CALLER", 0, 1);
    t[0x34] = op(0x34, "CALLVALUE", 0, 1);
    t[0x35] = op(0x35, "CALLDATALOAD", 1, 1);
    t[0x36] = op(0x36, "CALLDATASIZE", 0, 1);
    t[0x37] = op(0x37, "CALLDATACOPY", 3, 0);
    t[0x38] = op(0x38, "CODESIZE", 0, 1);
    t[0x39] = op(0x39, "CODECOPY", 3, 0);
    t[0x3a] = op(0x3a, "GASPRICE", 0, 1);
    t[0x3b] = op(0x3b, "EXTCODESIZE", 1, 1);
    t[0x3c] = op(0x3c, "EXTCODECOPY", 4, 0);
    t[0x3d] = op(0x3d, "RETURNDATASIZE", 0, 1);
    t[0x3e] = op(0x3e, "RETURNDATACOPY", 3, 0);
    t[0x3f] = op(0x3f, "EXTCODEHASH", 1, 1);

    t[0x40] = op(0x40, "BLOCKHASH", 1, 1);
    t[0x41] = op(0x41, "COINBASE", 0, 1);
    t[0x42] = op(0x42, "TIMESTAMP", 0, 1);
    t[0x43] = op(0x43, "NUMBER", 0, 1);
    t[0x44] = op(0x44, "PREVRANDAO", 0, 1);
    t[0x45] = op(0x45, "GASLIMIT", 0, 1);
    t[0x46] = op(0x46, "CHAINID", 0, 1);
    t[0x47] = op(0x47, "SELFBALANCE", 0, 1);
    t[0x48] = op(0x48, "BASEFEE", 0, 1);

    t[0x50] = op(0x50, "POP", 1, 0);
    t[0x51] = op(0x51, "MLOAD", 1, 1);
    t[0x52] = op(0x52, "MSTORE", 2, 0);
    t[0x53] = op(0x53, "MSTORE8", 2, 0);
    t[0x54] = op(0x54, "SLOAD", 1, 1);
    t[0x55] = op(0x55, "SSTORE", 2, 0);
    t[0x56] = op(0x56, "JUMP", 1, 0);
    t[0x57] = op(0x57, "JUMPI", 2, 0);
    t[0x58] = op(0x58, "PC", 0, 1);
    t[0x59] = op(0x59, "MSIZE", 0, 1);
    t[0x5a] = op(0x5a, "GAS", 0, 1);
    t[0x5b] = op(0x5b, "JUMPDEST", 0, 0);
    t[0x5f] = op(0x5f, "PUSH0", 0, 1);

    let mut n = 0;
    while n < 32 {
        let b = PUSH1 + n as u8;
        t[b as usize] = op(b, PUSH_NAMES[n], 0, 1);
        t[b as usize].immediate_width = n as u8 + 1;
        n += 1;
    }
    n = 0;
    while n < 16 {
        let d = DUP1 + n as u8;
        t[d as usize] = op(d, DUP_NAMES[n], n as u8 + 1, n as u8 + 2);
        let s = SWAP1 + n as u8;
        t[s as usize] = op(s, SWAP_NAMES[n], n as u8 + 2, n as u8 + 2);
        n += 1;
    }

    t[0xa0] = op(0xa0, "LOG0", 2, 0);
    t[0xa1] = op(0xa1, "LOG1", 3, 0);
    t[0xa2] = op(0xa2, "LOG2", 4, 0);
    t[0xa3] = op(0xa3, "LOG3", 5, 0);
    t[0xa4] = op(0xa4, "LOG4", 6, 0);

    t[0xf0] = op(0xf0, "CREATE", 3, 1);
    t[0xf1] = op(0xf1, "CALL", 7, 1);
    t[0xf2] = op(0xf2, "CALLCODE", 7, 1);
    t[0xf3] = op(0xf3, "RETURN", 2, 0);
    t[0xf4] = op(0xf4, "DELEGATECALL", 6, 1);
    t[0xf5] = op(0xf5, "CREATE2", 4, 1);
    t[0xfa] = op(0xfa, "STATICCALL", 6, 1);
    t[0xfd] = op(0xfd, "REVERT", 2, 0);
    t[0xfe] = op(0xfe, "INVALID", 0, 0);
    t[0xff] = op(0xff, "SELFDESTRUCT", 1, 0);
    t
}

static TABLE: [OpcodeSpec; 256] = build_table();

/// Look up the spec for a byte value. Total over `u8`.
#[inline]
pub fn spec(byte: u8) -> &'static OpcodeSpec {
    &TABLE[byte as usize]
}

/// The full 256-entry table, indexed by byte value.
pub fn table() -> &'static [OpcodeSpec; 256] {
    &TABLE
}

/// Reverse lookup by mnemonic. `INVALID` resolves to `0xfe`.
pub fn by_mnemonic(name: &str) -> Option<&'static OpcodeSpec> {
    TABLE.iter().find(|s| s.defined && s.mnemonic.eq_ignore_ascii_case(name))
}

/// `(pops, pushes)` for the opcode.
#[inline]
pub fn stack_effect(op: &OpcodeSpec) -> (usize, usize) {
    (op.pops as usize, op.pushes as usize)
}

impl OpcodeSpec {
    pub fn is_push(&self) -> bool {
        (PUSH0..=PUSH32).contains(&self.byte)
    }

    /// `n` for DUPn, otherwise `None`.
    pub fn dup_depth(&self) -> Option<usize> {
        (DUP1..=DUP16)
            .contains(&self.byte)
            .then(|| (self.byte - DUP1) as usize + 1)
    }

    /// `n` for SWAPn, otherwise `None`.
    pub fn swap_depth(&self) -> Option<usize> {
        (SWAP1..=SWAP16)
            .contains(&self.byte)
            .then(|| (self.byte - SWAP1) as usize + 1)
    }

    /// True for opcodes that end a basic block: terminators, JUMPI and the call family.
    pub fn ends_block(&self) -> bool {
        self.is_terminator || self.is_call || self.byte == JUMPI
    }

    /// STOP / RETURN: normal frame exits that hand control back to a caller.
    pub fn is_frame_exit(&self) -> bool {
        matches!(self.byte, STOP | RETURN)
    }
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub pc: usize,
    pub opcode: u8,
    /// Immediate bytes, always `immediate_width` long (zero-padded when truncated).
    #[serde(with = "crate::hexser::bytes", default, skip_serializing_if = "Vec::is_empty")]
    pub operand: Vec<u8>,
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub truncated: bool,
}

impl Instruction {
    pub fn new(pc: usize, opcode: u8, operand: Vec<u8>) -> Self {
        Instruction { pc, opcode, operand, truncated: false }
    }

    #[inline]
    pub fn spec(&self) -> &'static OpcodeSpec {
        spec(self.opcode)
    }

    pub fn mnemonic(&self) -> &'static str {
        self.spec().mnemonic
    }

    /// Byte length of the encoded instruction (opcode + full-width immediate).
    pub fn size(&self) -> usize {
        1 + self.spec().immediate_width as usize
    }

    /// Value pushed by a PUSH instruction.
    pub fn push_value(&self) -> Option<Word> {
        self.spec().is_push().then(|| Word::from_be_slice(&self.operand))
    }

    /// Append the canonical encoding. Truncated operands are emitted zero-padded.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode);
        out.extend_from_slice(&self.operand);
    }
}

impl fmt::Display for Instruction {
    /// `pc: MNEMONIC [0xoperand]`, the disassembly listing line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04x}: {}", self.pc, self.mnemonic())?;
        if !self.operand.is_empty() {
            f.write_str(" 0x")?;
            for b in &self.operand {
                write!(f, "{:02x}", b)?;
            }
        }
        if self.truncated {
            f.write_str(" (truncated)")?;
        }
        Ok(())
    }
}

/// Decode runtime bytecode into instructions. Total: never fails.
pub fn decode_bytecode(code: &[u8]) -> Vec<Instruction> {
    let mut out = Vec::with_capacity(code.len());
    let mut pc = 0;
    while pc < code.len() {
        let s = spec(code[pc]);
        let width = s.immediate_width as usize;
        let start = pc + 1;
        let end = start + width;
        let (operand, truncated) = if end <= code.len() {
            (code[start..end].to_vec(), false)
        } else {
            let mut v = code[start.min(code.len())..].to_vec();
            v.resize(width, 0);
            (v, true)
        };
        out.push(Instruction { pc, opcode: s.byte, operand, truncated });
        pc = end;
    }
    out
}

/// Re-encode an instruction stream.
pub fn encode(instructions: &[Instruction]) -> Vec<u8> {
    let mut out = Vec::new();
    for ins in instructions {
        ins.encode_into(&mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn decodes_simple_add() {
        let ins = decode_bytecode(&[0x60, 0x01, 0x60, 0x01, 0x01]);
        assert_eq!(ins.len(), 3);
        assert_eq!((ins[0].pc, ins[0].mnemonic(), ins[0].operand.as_slice()), (0, "PUSH1", &[1u8][..]));
        assert_eq!((ins[1].pc, ins[1].mnemonic()), (2, "PUSH1"));
        assert_eq!((ins[2].pc, ins[2].mnemonic()), (4, "ADD"));
        assert!(ins[2].operand.is_empty());
    }

    #[test]
    fn empty_input() {
        assert!(decode_bytecode(&[]).is_empty());
    }

    #[test]
    fn truncated_push_is_zero_padded() {
        let ins = decode_bytecode(&[0x61, 0xff]);
        assert_eq!(ins.len(), 1);
        assert_eq!(ins[0].mnemonic(), "PUSH2");
        assert_eq!(ins[0].operand, [0xff, 0x00]);
        assert!(ins[0].truncated);
        assert_eq!(ins[0].push_value().unwrap().low_u64(), 0xff00);
        assert_eq!(ins[0].to_string(), "0000: PUSH2 0xff00 (truncated)");
    }

    #[test]
    fn push_with_no_immediate_bytes_left() {
        let ins = decode_bytecode(&[0x00, 0x7f]);
        assert_eq!(ins[1].operand.len(), 32);
        assert!(ins[1].truncated);
    }

    #[test]
    fn stack_effects() {
        assert_eq!(stack_effect(spec(ADD)), (2, 1));
        assert_eq!(stack_effect(spec(DUP1)), (1, 2));
        assert_eq!(stack_effect(spec(CALL)), (7, 1));
        for n in 1..=16usize {
            assert_eq!(stack_effect(spec(DUP1 + n as u8 - 1)), (n, n + 1));
            assert_eq!(stack_effect(spec(SWAP1 + n as u8 - 1)), (n + 1, n + 1));
        }
    }

    #[test]
    fn undefined_bytes_are_invalid_terminators() {
        for b in [0x0c, 0x21, 0x49, 0x5c, 0xa5, 0xef, 0xfb] {
            let s = spec(b);
            assert!(!s.defined);
            assert_eq!(s.mnemonic, "INVALID");
            assert!(s.is_terminator);
            assert_eq!(stack_effect(s), (0, 0));
        }
    }

    #[test]
    fn pushes_at_most_one_except_dup_swap() {
        for s in table() {
            if s.dup_depth().is_none() && s.swap_depth().is_none() {
                assert!(s.pushes <= 1, "{}", s.mnemonic);
            }
        }
    }

    #[test]
    fn flags() {
        assert!(spec(JUMP).is_terminator);
        assert!(!spec(JUMPI).is_terminator);
        assert!(spec(JUMPI).ends_block());
        for b in [CALL, CALLCODE, DELEGATECALL, STATICCALL] {
            assert!(spec(b).is_call);
        }
        assert!(spec(JUMPDEST).is_jumpdest);
        assert_eq!(spec(PUSH0).immediate_width, 0);
        assert!(spec(PUSH0).is_push());
        assert_eq!(by_mnemonic("push32").unwrap().byte, PUSH32);
    }
}
