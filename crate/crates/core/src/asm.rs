//! A tiny two-pass assembler for hand-written fixtures.
//!
//! Tokens are whitespace separated: mnemonics, `PUSHn <imm>` where `<imm>` is a
//! decimal or `0x` literal or a `@label` reference, `@label:` definitions,
//! `PADTO <pc>` (fill with INVALID up to a pc) and `DATA 0x..` for raw bytes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::hexser::parse_hex;
use crate::isa::{self, by_mnemonic};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("missing immediate after `{0}`")]
    MissingImmediate(String),
    #[error("bad literal `{0}`")]
    BadLiteral(String),
    #[error("immediate `{0}` does not fit the push width")]
    Overflow(String),
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("PADTO {0:#x} is behind the current position")]
    PadBackwards(usize),
}

enum Item {
    Op(u8),
    Push { width: usize, imm: Imm },
    Data(Vec<u8>),
    Pad(usize),
}

enum Imm {
    Bytes(Vec<u8>),
    Label(String),
}

fn literal(tok: &str) -> Result<Vec<u8>, AsmError> {
    if tok.starts_with("0x") || tok.starts_with("0X") {
        let digits = &tok[2..];
        let padded = if digits.len() % 2 == 1 {
            let mut s = String::from("0");
            s.push_str(digits);
            s
        } else {
            digits.to_string()
        };
        parse_hex(&padded).map_err(|_| AsmError::BadLiteral(tok.to_string()))
    } else {
        let v: u64 = tok.parse().map_err(|_| AsmError::BadLiteral(tok.to_string()))?;
        let bytes = v.to_be_bytes();
        let first = bytes.iter().position(|&b| b != 0).unwrap_or(7);
        Ok(bytes[first..].to_vec())
    }
}

fn fit(mut bytes: Vec<u8>, width: usize, tok: &str) -> Result<Vec<u8>, AsmError> {
    while bytes.len() > width && bytes[0] == 0 {
        bytes.remove(0);
    }
    if bytes.len() > width {
        return Err(AsmError::Overflow(tok.to_string()));
    }
    let mut out = alloc::vec![0u8; width - bytes.len()];
    out.extend(bytes);
    Ok(out)
}

pub fn assemble(src: &str) -> Result<Vec<u8>, AsmError> {
    let mut items = Vec::new();
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut pc = 0usize;
    let mut toks = src.split_whitespace();
    while let Some(tok) = toks.next() {
        if let Some(name) = tok.strip_prefix('@').and_then(|t| t.strip_suffix(':')) {
            labels.insert(name.to_string(), pc);
            continue;
        }
        let upper = tok.to_ascii_uppercase();
        match upper.as_str() {
            "PADTO" => {
                let arg = toks.next().ok_or_else(|| AsmError::MissingImmediate(upper.clone()))?;
                let target = literal(arg)?
                    .iter()
                    .fold(0usize, |acc, &b| (acc << 8) | b as usize);
                if target < pc {
                    return Err(AsmError::PadBackwards(target));
                }
                items.push(Item::Pad(target - pc));
                pc = target;
            }
            "DATA" => {
                let arg = toks.next().ok_or_else(|| AsmError::MissingImmediate(upper.clone()))?;
                let bytes = parse_hex(arg).map_err(|_| AsmError::BadLiteral(arg.to_string()))?;
                pc += bytes.len();
                items.push(Item::Data(bytes));
            }
            _ => {
                let spec = by_mnemonic(&upper).ok_or_else(|| AsmError::UnknownMnemonic(tok.to_string()))?;
                let width = spec.immediate_width as usize;
                if width == 0 {
                    items.push(Item::Op(spec.byte));
                } else {
                    let arg = toks.next().ok_or_else(|| AsmError::MissingImmediate(upper.clone()))?;
                    let imm = match arg.strip_prefix('@') {
                        Some(l) => Imm::Label(l.to_string()),
                        None => Imm::Bytes(fit(literal(arg)?, width, arg)?),
                    };
                    items.push(Item::Push { width, imm });
                }
                pc += 1 + width;
            }
        }
    }

    let mut out = Vec::with_capacity(pc);
    for item in items {
        match item {
            Item::Op(b) => out.push(b),
            Item::Data(d) => out.extend(d),
            Item::Pad(n) => out.extend(core::iter::repeat_n(isa::INVALID, n)),
            Item::Push { width, imm } => {
                out.push(isa::PUSH1 + width as u8 - 1);
                let bytes = match imm {
                    Imm::Bytes(b) => b,
                    Imm::Label(l) => {
                        let at = *labels.get(&l).ok_or_else(|| AsmError::UndefinedLabel(l.clone()))?;
                        fit((at as u64).to_be_bytes().to_vec(), width, &l)?
                    }
                };
                out.extend(bytes);
            }
        }
    }
    Ok(out)
}
