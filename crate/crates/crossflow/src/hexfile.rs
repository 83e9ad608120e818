//! Hex-encoded bytecode files.

use std::path::Path;

use crossflow_core::hexser::parse_hex;

use crate::error::{Error, Result};

/// Decode hex text with an optional `0x` prefix; ASCII whitespace anywhere is ignored.
pub fn parse_hex_text(text: &str) -> Result<Vec<u8>, String> {
    let compact: String = text.chars().filter(|c| !c.is_ascii_whitespace()).collect();
    parse_hex(&compact).map_err(|e| e.to_string())
}

pub fn read_hex(path: &Path) -> Result<Vec<u8>> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    parse_hex_text(&text).map_err(|m| Error::input(path, format!("invalid hex: {m}")))
}

/// Contract identifier of a bytecode file: its file stem.
pub fn contract_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
