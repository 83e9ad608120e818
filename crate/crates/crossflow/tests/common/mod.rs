//! Corpus and configuration shared by the integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use crossflow::config::Label;
use crossflow::synth::{cross_contract_corpus, write_corpus, SyntheticProtocol};
use crossflow::PipelineConfig;
use crossflow_core::model::ModelConfig;

/// Runs in seconds on one core.
pub fn small_model() -> ModelConfig {
    ModelConfig { embed: 32, hidden: 64, layers: 2, heads: 4, ff: 128, max_len: 128, gcn_hidden: 32, ..ModelConfig::default() }
}

pub fn small_config(epochs: usize) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.model = small_model();
    c.truncation = 128;
    c.train.lr_encoder = 1e-4;
    c.train.lr_gcn = 1e-2;
    c.train.batch_size = 8;
    c.train.epochs = epochs;
    c
}

/// `n` access-control and `n` flash-loan protocols, each half benign.
pub fn mixed_corpus(n: usize, seed: u64) -> Vec<SyntheticProtocol> {
    let mut all = cross_contract_corpus(n, seed, Label::AccessControl);
    for mut p in cross_contract_corpus(n, seed + 1, Label::FlashLoan) {
        p.id = p.id.replace("synthetic", "synthetic-fl");
        all.push(p);
    }
    all
}

pub fn write_mixed(dir: &Path, n: usize, seed: u64) -> PathBuf {
    write_corpus(dir, &mixed_corpus(n, seed)).unwrap()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_crossflow")
}
