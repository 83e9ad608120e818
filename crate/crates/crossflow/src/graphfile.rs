//! Versioned binary container for [`HeteroGraph`].
//!
//! Layout, little-endian: magic `XFGRAPH\0`, version `u32`, then `n_path`,
//! `n_opcode`, `d`, `window` as `u64`, the idf mode byte, the vocabulary as
//! length-prefixed strings, `n_opcode` idf values and the packed lower-triangular
//! weights, all `f64`.

use std::path::Path;

use crossflow_core::graph::{HeteroGraph, IdfMode, OpcodeVocabulary};
use crossflow_core::linalg::Matrix;

use crate::codec::{Reader, Writer};
use crate::error::{Error, FormatError, Result};

const MAGIC: &[u8; 8] = b"XFGRAPH\0";
const VERSION: u32 = 1;

pub fn encode_graph(g: &HeteroGraph, idf: IdfMode) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.usize(g.n_path);
    w.usize(g.n_opcode);
    w.usize(g.d);
    w.usize(g.window);
    w.u8(match idf {
        IdfMode::Raw => 0,
        IdfMode::Smooth => 1,
    });
    for m in g.vocab.mnemonics() {
        w.str(m);
    }
    w.f64s(&g.idf);
    w.f64s(&g.weights);
    w.buf
}

pub fn decode_graph(bytes: &[u8]) -> Result<(HeteroGraph, IdfMode), FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, VERSION)?;
    let n_path = r.usize()?;
    let n_opcode = r.count(4)?;
    let d = r.usize()?;
    let window = r.usize()?;
    let idf_mode = match r.u8()? {
        0 => IdfMode::Raw,
        1 => IdfMode::Smooth,
        b => return Err(FormatError::Invalid(format!("idf mode {b}"))),
    };
    let mnemonics = (0..n_opcode).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
    let vocab = OpcodeVocabulary::from_mnemonics(mnemonics);
    if vocab.len() != n_opcode {
        return Err(FormatError::Invalid("duplicate vocabulary entry".into()));
    }
    let idf = r.f64s(n_opcode)?;
    let n = n_path.checked_add(n_opcode).ok_or(FormatError::Truncated)?;
    let weights = r.f64s(n.checked_mul(n + 1).ok_or(FormatError::Truncated)? / 2)?;
    r.finish()?;
    let node_features = Matrix::zeros(n, d);
    Ok((HeteroGraph { n_path, n_opcode, window, vocab, idf, weights, d, node_features }, idf_mode))
}

pub fn write_graph(path: &Path, g: &HeteroGraph, idf: IdfMode) -> Result<()> {
    std::fs::write(path, encode_graph(g, idf)).map_err(Error::io(path))
}

pub fn read_graph(path: &Path) -> Result<(HeteroGraph, IdfMode)> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_graph(&bytes).map_err(|source| Error::Format { path: path.into(), source })
}
