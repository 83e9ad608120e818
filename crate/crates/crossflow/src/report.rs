//! Scan reports and their canonical serializations.

use std::collections::BTreeMap;
use std::fmt::Write;

use crossflow_core::link::LinkSummary;
use crossflow_core::model::ProtocolVerdict;
use crossflow_core::symstack::Infeasible;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Detector, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntryRef {
    pub contract: String,
    pub block: usize,
    pub pc: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    /// Position in enumeration order.
    pub id: usize,
    pub entry: PathEntryRef,
    /// Instructions on the path.
    pub length: usize,
    pub truncated: bool,
    /// Contracts the path crosses into, in order of first appearance.
    pub contracts: Vec<String>,
    pub feasible: bool,
    pub reason: Option<Infeasible>,
    /// `[benign, malicious]` per detector; empty for paths that were not scored.
    pub probabilities: BTreeMap<Detector, [f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub contracts: usize,
    pub blocks: usize,
    pub call_sites: LinkSummary,
    pub entries: usize,
    pub paths_enumerated: usize,
    pub paths_feasible: usize,
    pub paths_rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub protocol_id: String,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub verdicts: BTreeMap<Detector, ProtocolVerdict>,
    pub paths: Vec<PathRecord>,
    pub stats: PipelineStats,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

/// Round every float to 12 decimal places so equal reports print equal bytes.
fn canonicalize(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap();
            let r = (x * 1e12).round() / 1e12;
            *v = serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r }).map_or(Value::Null, Value::Number);
        }
        Value::Array(a) => a.iter_mut().for_each(canonicalize),
        Value::Object(o) => o.values_mut().for_each(canonicalize),
        _ => {}
    }
}

/// Canonical JSON value: sorted keys, rounded floats.
pub fn to_canonical_value<T: Serialize>(value: &T) -> Value {
    let mut v = serde_json::to_value(value).expect("report serializes");
    canonicalize(&mut v);
    v
}

fn verdict_name(v: ProtocolVerdict) -> &'static str {
    match v {
        ProtocolVerdict::Malicious => "malicious",
        ProtocolVerdict::Benign => "benign",
        ProtocolVerdict::NoEvidence => "no-evidence",
    }
}

fn text(r: &ScanReport) -> String {
    let mut s = String::new();
    let st = &r.stats;
    let _ = writeln!(s, "protocol {}  (crossflow {})", r.protocol_id, r.tool_version);
    for (d, v) in &r.verdicts {
        let _ = writeln!(s, "  {:<15} {}", d.name(), verdict_name(*v));
    }
    let cs = &st.call_sites;
    let _ = writeln!(
        s,
        "  contracts {}  blocks {}  call sites matched {} ambiguous {} unknown {} unresolved {}",
        st.contracts, st.blocks, cs.matched, cs.ambiguous, cs.unknown, cs.unresolved
    );
    let _ = writeln!(
        s,
        "  paths enumerated {}  feasible {}  rejected {}",
        st.paths_enumerated, st.paths_feasible, st.paths_rejected
    );
    for d in &r.diagnostics {
        let _ = writeln!(s, "  note: {d}");
    }
    for p in &r.paths {
        let _ = write!(s, "path {:>4}  {}@{:#06x}  len {:>5}", p.id, p.entry.contract, p.entry.pc, p.length);
        if p.truncated {
            s.push_str(" truncated");
        }
        match &p.reason {
            None => s.push_str("  feasible"),
            Some(reason) => {
                let _ = write!(s, "  rejected {}", serde_json::to_string(reason).unwrap());
            }
        }
        for (d, y) in &p.probabilities {
            let _ = write!(s, "  {}={:.4}", d.name(), y[1]);
        }
        s.push('\n');
    }
    s
}

pub fn emit_report(report: &ScanReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&to_canonical_value(report)).unwrap();
            out.push(b'\n');
            out
        }
        ReportFormat::Text => text(report).into_bytes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ScanReport {
        let rec = |id, feasible: bool| PathRecord {
            id,
            entry: PathEntryRef { contract: "a".into(), block: 0, pc: 0x10 },
            length: 12,
            truncated: false,
            contracts: vec!["a".into(), "b".into()],
            feasible,
            reason: (!feasible).then_some(Infeasible::Underflow { pc: 3 }),
            probabilities: if feasible {
                BTreeMap::from([(Detector::AccessControl, [0.1 + 0.2, 1.0 - (0.1 + 0.2)])])
            } else {
                BTreeMap::new()
            },
        };
        ScanReport {
            protocol_id: "p".into(),
            tool_version: "0.1.0".into(),
            config: PipelineConfig::default(),
            verdicts: BTreeMap::from([(Detector::FlashLoan, ProtocolVerdict::NoEvidence), (Detector::AccessControl, ProtocolVerdict::Benign)]),
            paths: vec![rec(0, true), rec(1, false)],
            stats: PipelineStats { paths_enumerated: 2, paths_feasible: 1, paths_rejected: 1, ..PipelineStats::default() },
            diagnostics: vec![],
        }
    }

    #[test]
    fn json_is_stable_and_sorted() {
        let a = emit_report(&report(), ReportFormat::Json);
        assert_eq!(a, emit_report(&report(), ReportFormat::Json));
        let v: Value = serde_json::from_slice(&a).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("0.3,"), "float noise rounded away: {text}");
        assert!(text.find("\"access-control\"").unwrap() < text.find("\"flash-loan\"").unwrap());
    }

    #[test]
    fn json_round_trips() {
        let r = report();
        let bytes = emit_report(&r, ReportFormat::Json);
        let back: ScanReport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back.paths.len(), 2);
        assert_eq!(back.paths[1].reason, r.paths[1].reason);
        assert_eq!(back.verdicts, r.verdicts);
        assert_eq!(emit_report(&back, ReportFormat::Json), bytes);
    }

    #[test]
    fn text_has_one_line_per_path() {
        let t = String::from_utf8(emit_report(&report(), ReportFormat::Text)).unwrap();
        assert_eq!(t.lines().filter(|l| l.starts_with("path ")).count(), 2);
        assert!(t.contains("rejected"));
        assert!(t.contains("access-control=0.7000"));
    }
}
