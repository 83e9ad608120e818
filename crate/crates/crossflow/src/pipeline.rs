//! disassemble → CFG → link → paths → validate → featurize → predict.

use std::collections::BTreeMap;

use crossflow_core::cfg::ContractCfg;
use crossflow_core::graph::{assemble_encoded, normalize_adjacency, GraphOptions, HeteroGraph, OpcodeVocabulary};
use crossflow_core::link::{link_report, link_with, LinkOptions, LinkedCfg, NodeRef};
use crossflow_core::model::{path_tokens, predict, train, EpochMetrics, ModelError, Prediction, ProtocolVerdict};
use crossflow_core::paths::{entries_for_protocol, enumerate_paths_with, DataPath};
use crossflow_core::symstack::{validate_path, Verdict};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{Detector, PipelineConfig};
use crate::error::{Error, Result};
use crate::hexfile::{contract_id, read_hex};
use crate::manifest::{EntryHint, ProtocolManifestEntry};
use crate::report::{PathEntryRef, PathRecord, PipelineStats, ScanReport};
use crate::VERSION;

/// Decoded contracts of one protocol; undecodable files become diagnostics.
pub fn load_contracts(entry: &ProtocolManifestEntry) -> (Vec<ContractCfg>, Vec<String>) {
    let mut cfgs: Vec<ContractCfg> = Vec::new();
    let mut notes = Vec::new();
    for f in &entry.contract_files {
        let id = contract_id(f);
        match read_hex(f) {
            Ok(code) if code.is_empty() => notes.push(format!("{}: empty bytecode", f.display())),
            Ok(_) if cfgs.iter().any(|c| c.contract_id == id) => {
                notes.push(format!("{}: duplicate contract id `{id}` skipped", f.display()))
            }
            Ok(code) => cfgs.push(ContractCfg::build(id, &code)),
            Err(e) => notes.push(e.to_string()),
        }
    }
    (cfgs, notes)
}

/// Everything the pipeline derives from one protocol before scoring.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub linked: LinkedCfg,
    pub entries: Vec<NodeRef>,
    pub paths: Vec<DataPath>,
    /// Per path; every path is feasible when validation is off.
    pub verdicts: Vec<Verdict>,
    pub diagnostics: Vec<String>,
}

impl Analysis {
    pub fn feasible(&self) -> Vec<&DataPath> {
        self.paths.iter().zip(&self.verdicts).filter(|(_, v)| v.feasible).map(|(p, _)| p).collect()
    }

    pub fn stats(&self) -> PipelineStats {
        let feasible = self.verdicts.iter().filter(|v| v.feasible).count();
        PipelineStats {
            contracts: self.linked.contracts.len(),
            blocks: self.linked.block_count(),
            call_sites: link_report(&self.linked),
            entries: self.entries.len(),
            paths_enumerated: self.paths.len(),
            paths_feasible: feasible,
            paths_rejected: self.paths.len() - feasible,
        }
    }
}

/// Entry nodes named by `hints`, or every function segment when there are none.
pub fn resolve_entries(linked: &LinkedCfg, hints: &[EntryHint]) -> (Vec<NodeRef>, Vec<String>) {
    if hints.is_empty() {
        return (entries_for_protocol(linked), Vec::new());
    }
    let mut out = Vec::new();
    let mut notes = Vec::new();
    for h in hints {
        let Some(ci) = linked.contract_index(&h.contract) else {
            notes.push(format!("entry hint names unknown contract `{}`", h.contract));
            continue;
        };
        let block = match h.selector {
            None => Some(0),
            Some(sel) => linked.contracts[ci].functions.iter().find(|f| f.selector == Some(sel)).map(|f| f.entry_block),
        };
        match block {
            Some(block) if !out.contains(&NodeRef { contract: ci, block }) => out.push(NodeRef { contract: ci, block }),
            Some(_) => {}
            None => notes.push(format!("contract `{}` has no function {}", h.contract, h.selector.unwrap())),
        }
    }
    (out, notes)
}

pub fn analyze(contracts: Vec<ContractCfg>, hints: &[EntryHint], config: &PipelineConfig) -> Analysis {
    let linked = link_with(contracts, LinkOptions { enabled: !config.no_link });
    let (entries, diagnostics) = resolve_entries(&linked, hints);
    let opts = config.path_options();
    let paths: Vec<DataPath> = entries.iter().flat_map(|&e| enumerate_paths_with(&linked, e, opts)).collect();
    let verdicts = paths
        .iter()
        .map(|p| if config.no_validate { Verdict::FEASIBLE } else { validate_path(p) })
        .collect();
    Analysis { linked, entries, paths, verdicts, diagnostics }
}

pub fn mnemonic_paths<'a>(paths: &'a [&DataPath]) -> impl Iterator<Item = impl Iterator<Item = &'static str> + 'a> {
    paths.iter().map(|p| p.mnemonics())
}

/// Heterogeneous graph over `paths` with a vocabulary built from them.
pub fn featurize(paths: &[&DataPath], config: &PipelineConfig) -> HeteroGraph {
    let vocab = OpcodeVocabulary::build(mnemonic_paths(paths));
    let seqs: Vec<Vec<usize>> = paths.iter().map(|p| vocab.encode(p.mnemonics())).collect();
    let opts = GraphOptions { window: config.window, idf: config.idf, d: config.model.hidden };
    assemble_encoded(&seqs, vocab, opts)
}

/// Score `paths` with a trained detector: they join its graph as new path nodes.
pub fn score(ckpt: &Checkpoint, paths: &[&DataPath], lambda: f64) -> Result<Vec<Prediction>> {
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let g = ckpt.graph.attach_paths(mnemonic_paths(paths));
    let adj = normalize_adjacency(&g);
    let tokens: Vec<Vec<u16>> = paths.iter().map(|p| path_tokens(p.opcodes(), ckpt.model.train.truncation)).collect();
    Ok(predict(&ckpt.model, &adj, &tokens, lambda)?)
}

fn record(linked: &LinkedCfg, id: usize, p: &DataPath, v: &Verdict) -> PathRecord {
    let mut contracts: Vec<String> = Vec::new();
    for s in &p.steps {
        let name = &linked.contracts[s.contract].contract_id;
        if !contracts.contains(name) {
            contracts.push(name.clone());
        }
    }
    let start = linked.contracts[p.entry.contract].blocks[p.entry.block].start_pc;
    PathRecord {
        id,
        entry: PathEntryRef { contract: p.entry.contract_id.clone(), block: p.entry.block, pc: start },
        length: p.steps.len(),
        truncated: p.truncated,
        contracts,
        feasible: v.feasible,
        reason: v.reason,
        probabilities: BTreeMap::new(),
    }
}

pub fn scan(entry: &ProtocolManifestEntry, config: &PipelineConfig, detectors: &[Checkpoint]) -> Result<ScanReport> {
    let (contracts, mut diagnostics) = load_contracts(entry);
    let mut report = ScanReport {
        protocol_id: entry.protocol_id.clone(),
        tool_version: VERSION.to_string(),
        config: config.clone(),
        verdicts: detectors.iter().map(|c| (c.detector, ProtocolVerdict::NoEvidence)).collect(),
        paths: Vec::new(),
        stats: PipelineStats::default(),
        diagnostics: Vec::new(),
    };
    if contracts.is_empty() {
        diagnostics.push("no decodable contracts".into());
        report.diagnostics = diagnostics;
        return Ok(report);
    }
    let analysis = analyze(contracts, &entry.entry_hints, config);
    diagnostics.extend(analysis.diagnostics.iter().cloned());
    report.stats = analysis.stats();
    report.paths = analysis
        .paths
        .iter()
        .zip(&analysis.verdicts)
        .enumerate()
        .map(|(i, (p, v))| record(&analysis.linked, i, p, v))
        .collect();
    let feasible_ids: Vec<usize> = report.paths.iter().filter(|r| r.feasible).map(|r| r.id).collect();
    let feasible = analysis.feasible();
    for ckpt in detectors {
        let preds = score(ckpt, &feasible, config.lambda)?;
        for (&id, p) in feasible_ids.iter().zip(&preds) {
            report.paths[id].probabilities.insert(ckpt.detector, p.y);
        }
        report.verdicts.insert(ckpt.detector, ProtocolVerdict::aggregate(&preds));
    }
    if feasible.is_empty() {
        diagnostics.push("no feasible paths".into());
    }
    report.diagnostics = diagnostics;
    Ok(report)
}

/// Seeded shuffle of `n` protocols into `round(0.8 n)` training and the rest test.
pub fn split_protocols(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    order.shuffle(&mut rng);
    let n_train = (n as f64 * 0.8).round() as usize;
    let test = order.split_off(n_train);
    (order, test)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolOutcome {
    pub protocol_id: String,
    pub target: usize,
    pub verdict: ProtocolVerdict,
    pub paths: usize,
}

impl ProtocolOutcome {
    /// A protocol without evidence counts as not flagged.
    pub fn correct(&self) -> bool {
        usize::from(self.verdict == ProtocolVerdict::Malicious) == self.target
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub detector: Detector,
    pub train_protocols: Vec<String>,
    pub test_protocols: Vec<String>,
    pub train_paths: usize,
    pub history: Vec<EpochMetrics>,
    pub test: Vec<ProtocolOutcome>,
    /// Fraction of test protocols whose verdict matches the label.
    pub test_accuracy: Option<f64>,
    /// Fraction of feasible test paths whose argmax matches their protocol's label.
    pub test_path_accuracy: Option<f64>,
}

struct Prepared {
    id: String,
    target: usize,
    paths: Vec<DataPath>,
}

fn prepare(entry: &ProtocolManifestEntry, detector: Detector, config: &PipelineConfig) -> Result<Prepared> {
    let label = entry.label.ok_or_else(|| Error::Data(format!("protocol {} has no label", entry.protocol_id)))?;
    let (contracts, _) = load_contracts(entry);
    let analysis = analyze(contracts, &entry.entry_hints, config);
    let paths = analysis.feasible().into_iter().cloned().collect();
    Ok(Prepared { id: entry.protocol_id.clone(), target: detector.target(label), paths })
}

pub fn train_detector(
    entries: &[ProtocolManifestEntry],
    detector: Detector,
    config: &PipelineConfig,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate().map_err(Error::Data)?;
    let prepared = entries.iter().map(|e| prepare(e, detector, config)).collect::<Result<Vec<_>>>()?;
    if prepared.iter().all(|p| p.target == 0) || prepared.iter().all(|p| p.target == 1) {
        return Err(Error::Data(format!("{detector}: dataset has a single class")));
    }
    let (train_idx, test_idx) = split_protocols(prepared.len(), config.seed);

    let train_paths: Vec<&DataPath> = train_idx.iter().flat_map(|&i| &prepared[i].paths).collect();
    let labels: Vec<usize> =
        train_idx.iter().flat_map(|&i| std::iter::repeat_n(prepared[i].target, prepared[i].paths.len())).collect();
    if train_paths.is_empty() {
        return Err(Error::Model(ModelError::EmptyDataset));
    }
    let graph = featurize(&train_paths, config);
    let adj = normalize_adjacency(&graph);
    let tc = config.train_config();
    let tokens: Vec<Vec<u16>> = train_paths.iter().map(|p| path_tokens(p.opcodes(), tc.truncation)).collect();
    let (model, history) = train(&config.model, &tc, &adj, &tokens, &labels)?;
    let ckpt = Checkpoint { detector, config: config.clone(), model, graph, idf: config.idf };

    let mut test = Vec::new();
    let (mut path_hits, mut path_total) = (0, 0);
    for &i in &test_idx {
        let p = &prepared[i];
        let refs: Vec<&DataPath> = p.paths.iter().collect();
        let preds = score(&ckpt, &refs, config.lambda)?;
        path_hits += preds.iter().filter(|q| q.label == p.target).count();
        path_total += preds.len();
        let verdict = ProtocolVerdict::aggregate(&preds);
        test.push(ProtocolOutcome { protocol_id: p.id.clone(), target: p.target, verdict, paths: preds.len() });
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let report = TrainReport {
        detector,
        train_protocols: train_idx.iter().map(|&i| prepared[i].id.clone()).collect(),
        test_protocols: test_idx.iter().map(|&i| prepared[i].id.clone()).collect(),
        train_paths: train_paths.len(),
        history,
        test_accuracy: ratio(test.iter().filter(|o| o.correct()).count(), test.len()),
        test_path_accuracy: ratio(path_hits, path_total),
        test,
    };
    Ok((ckpt, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_proportions() {
        let (a, b) = split_protocols(10, 7);
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(split_protocols(10, 7), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_protocols(3, 0).0.len(), 2);
        assert_eq!(split_protocols(1, 0).0.len(), 1);
        assert_ne!(split_protocols(20, 1), split_protocols(20, 2));
    }
}
