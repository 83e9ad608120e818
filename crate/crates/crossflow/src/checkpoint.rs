//! Versioned binary checkpoint of one trained detector.
//!
//! Layout, little-endian: magic `XFCKPT\0\0`, version `u32`, the configuration
//! echo as length-prefixed JSON, the named tensor table (`u32` count, then per
//! tensor its name, `rows`, `cols` and `f64` data), the class weights, and the
//! training graph as an embedded graph container. Path-node features of the
//! training corpus are stored in the table under the name `memory`.

use std::path::Path;

use crossflow_core::linalg::Matrix;
use crossflow_core::graph::{HeteroGraph, IdfMode};
use crossflow_core::model::{ModelConfig, Params, TrainConfig, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::config::{Detector, PipelineConfig};
use crate::error::{Error, FormatError, Result};
use crate::graphfile::{decode_graph, encode_graph};

const MAGIC: &[u8; 8] = b"XFCKPT\0\0";
const VERSION: u32 = 1;
const MEMORY: &str = "memory";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub detector: Detector,
    /// Configuration the detector was trained with.
    pub config: PipelineConfig,
    pub model: TrainedModel,
    pub graph: HeteroGraph,
    pub idf: IdfMode,
}

#[derive(Serialize, Deserialize)]
struct Echo {
    detector: Detector,
    pipeline: PipelineConfig,
    model: ModelConfig,
    train: TrainConfig,
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let echo = Echo { detector: c.detector, pipeline: c.config.clone(), model: c.model.model, train: c.model.train };
    w.str(&serde_json::to_string(&echo).expect("config serializes"));
    let names = c.model.params.names();
    let tensors = c.model.params.tensors();
    w.u32(names.len() as u32 + 1);
    for (name, t) in names.iter().zip(tensors) {
        w.str(name);
        w.matrix(t);
    }
    w.str(MEMORY);
    w.matrix(&c.model.memory);
    w.f64s(&c.model.weights);
    w.blob(&encode_graph(&c.graph, c.idf));
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, VERSION)?;
    let echo: Echo = serde_json::from_str(&r.str()?).map_err(|e| FormatError::Invalid(format!("config echo: {e}")))?;
    echo.model.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
    let count = r.u32()? as usize;
    let mut named = Vec::new();
    let mut memory = None;
    for _ in 0..count {
        let name = r.str()?;
        let m = r.matrix()?;
        if name == MEMORY {
            memory = Some(m);
        } else {
            named.push((name, m));
        }
    }
    let memory = memory.ok_or_else(|| FormatError::Invalid("missing memory tensor".into()))?;
    let params = Params::from_named(&echo.model, &named).map_err(|e| FormatError::Invalid(e.to_string()))?;
    let w = r.f64s(2)?;
    let (graph, idf) = decode_graph(r.blob()?)?;
    r.finish()?;
    if memory.cols != echo.model.hidden || memory.rows != graph.n_path {
        return Err(FormatError::Invalid("memory does not match the graph's path nodes".into()));
    }
    let model = TrainedModel { model: echo.model, train: echo.train, params, memory, weights: [w[0], w[1]] };
    Ok(Checkpoint { detector: echo.detector, config: echo.pipeline, model, graph, idf })
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c)).map_err(Error::io(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Format { path: path.into(), source })
}

/// Shape summary used by the CLI: tensor name and dimensions.
pub fn tensor_table(c: &Checkpoint) -> Vec<(String, usize, usize)> {
    let mut out: Vec<_> = c
        .model
        .params
        .names()
        .into_iter()
        .zip(c.model.params.tensors())
        .map(|(n, t): (String, &Matrix)| (n, t.rows, t.cols))
        .collect();
    out.push((MEMORY.into(), c.model.memory.rows, c.model.memory.cols));
    out
}
