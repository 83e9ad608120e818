//! JSON-lines protocol manifests.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crossflow_core::cfg::Selector;
use serde::{Deserialize, Serialize};

use crate::config::Label;
use crate::error::{Error, Result};

/// Restricts path enumeration to one function of one contract. Without a selector
/// the contract's first block is the entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryHint {
    pub contract: String,
    #[serde(default)]
    pub selector: Option<Selector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolManifestEntry {
    pub protocol_id: String,
    /// Resolved against the manifest's directory when relative.
    pub contract_files: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entry_hints: Vec<EntryHint>,
}

/// A manifest line that did not yield an entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntryError {
    /// 1-based line number.
    pub line: usize,
    pub protocol_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ingested {
    /// In manifest order.
    pub entries: Vec<ProtocolManifestEntry>,
    pub errors: Vec<EntryError>,
}

impl Ingested {
    /// Entries that carry a label, or an error naming the first that does not.
    pub fn require_labels(&self) -> Result<()> {
        match self.entries.iter().find(|e| e.label.is_none()) {
            Some(e) => Err(Error::Data(format!("protocol {} has no label", e.protocol_id))),
            None => Ok(()),
        }
    }
}

/// Parse manifest text. Blank lines are skipped; relative paths are joined to `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Ingested {
    let mut out = Ingested::default();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut entry: ProtocolManifestEntry = match serde_json::from_str(raw) {
            Ok(e) => e,
            Err(e) => {
                let protocol_id = serde_json::from_str::<serde_json::Value>(raw)
                    .ok()
                    .and_then(|v| v.get("protocol_id")?.as_str().map(String::from));
                out.errors.push(EntryError { line, protocol_id, message: e.to_string() });
                continue;
            }
        };
        let fail = |message: String| EntryError { line, protocol_id: Some(entry.protocol_id.clone()), message };
        if entry.contract_files.is_empty() {
            out.errors.push(fail("no contract files".into()));
            continue;
        }
        if !ids.insert(entry.protocol_id.clone()) {
            out.errors.push(fail(format!("duplicate protocol_id `{}`", entry.protocol_id)));
            continue;
        }
        for f in &mut entry.contract_files {
            if f.is_relative() {
                *f = base.join(&*f);
            }
        }
        let missing: Vec<String> =
            entry.contract_files.iter().filter(|f| !f.is_file()).map(|f| f.display().to_string()).collect();
        if !missing.is_empty() {
            out.errors.push(fail(format!("missing contract file(s): {}", missing.join(", "))));
            continue;
        }
        out.entries.push(entry);
    }
    out
}

/// Read and parse a manifest file; only an unreadable manifest is an error.
pub fn ingest(path: &Path) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(parse_manifest(&text, path.parent().unwrap_or(Path::new(""))))
}
