//! Path/opcode graph: PPMI between opcodes, TF-IDF between paths and opcodes,
//! unit self-loops, packed lower-triangular storage and symmetric normalization.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub const DEFAULT_WINDOW: usize = 20;

/// Mnemonic to dense index, in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct OpcodeVocabulary {
    mnemonics: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for OpcodeVocabulary {
    fn from(mnemonics: Vec<String>) -> Self {
        OpcodeVocabulary::from_mnemonics(mnemonics)
    }
}

impl From<OpcodeVocabulary> for Vec<String> {
    fn from(v: OpcodeVocabulary) -> Self {
        v.mnemonics
    }
}

impl OpcodeVocabulary {
    pub fn build<'a, P, I>(paths: P) -> OpcodeVocabulary
    where
        P: IntoIterator<Item = I>,
        I: IntoIterator<Item = &'a str>,
    {
        let mut v = OpcodeVocabulary::default();
        for p in paths {
            for m in p {
                v.insert(m);
            }
        }
        v
    }

    pub fn from_mnemonics(mnemonics: Vec<String>) -> OpcodeVocabulary {
        let mut v = OpcodeVocabulary::default();
        for m in &mnemonics {
            v.insert(m);
        }
        v
    }

    fn insert(&mut self, m: &str) -> usize {
        if let Some(&i) = self.index.get(m) {
            return i;
        }
        let i = self.mnemonics.len();
        self.mnemonics.push(m.to_string());
        self.index.insert(m.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.mnemonics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mnemonics.is_empty()
    }

    pub fn get(&self, mnemonic: &str) -> Option<usize> {
        self.index.get(mnemonic).copied()
    }

    pub fn mnemonics(&self) -> &[String] {
        &self.mnemonics
    }

    /// Map a mnemonic sequence to indices, dropping out-of-vocabulary entries.
    pub fn encode<'a>(&self, path: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        path.into_iter().filter_map(|m| self.get(m)).collect()
    }
}

/// Sliding windows of one sequence: a sequence no longer than the window is a
/// single window; an empty one has none.
fn windows(seq: &[usize], window: usize) -> impl Iterator<Item = &[usize]> {
    let n = if seq.is_empty() { 0 } else { seq.len().saturating_sub(window) + 1 };
    (0..n).map(move |s| &seq[s..(s + window).min(seq.len())])
}

/// Dense `n_opcode × n_opcode` PPMI matrix over sliding windows, natural log,
/// negatives clipped at zero.
pub fn compute_ppmi(paths: &[Vec<usize>], vocab: &OpcodeVocabulary, window: usize) -> Matrix {
    assert!(window >= 2, "window must be at least 2");
    let n = vocab.len();
    let mut single = vec![0u64; n];
    let mut pair = vec![0u64; n * n];
    let mut total = 0u64;
    let mut seen = vec![usize::MAX; n];
    let mut present = Vec::with_capacity(window);
    let mut stamp = 0usize;
    for p in paths {
        for w in windows(p, window) {
            total += 1;
            present.clear();
            for &t in w {
                if seen[t] != stamp {
                    seen[t] = stamp;
                    present.push(t);
                }
            }
            stamp += 1;
            for &i in &present {
                single[i] += 1;
                for &j in &present {
                    pair[i * n + j] += 1;
                }
            }
        }
    }
    let mut out = Matrix::zeros(n, n);
    if total == 0 {
        return out;
    }
    let w = total as f64;
    for i in 0..n {
        for j in 0..n {
            let c = pair[i * n + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / w;
            let pi = single[i] as f64 / w;
            let pj = single[j] as f64 / w;
            out[(i, j)] = libm::log(pij / (pi * pj)).max(0.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdfMode {
    /// `ln(N / df)`
    #[default]
    Raw,
    /// `ln((1 + N) / (1 + df)) + 1`
    Smooth,
}

/// `idf(j)`; opcodes with zero document frequency get 0.
pub fn compute_idf(paths: &[Vec<usize>], n_opcode: usize, mode: IdfMode) -> Vec<f64> {
    let mut df = vec![0usize; n_opcode];
    let mut seen = vec![usize::MAX; n_opcode];
    for (pi, p) in paths.iter().enumerate() {
        for &t in p {
            if seen[t] != pi {
                seen[t] = pi;
                df[t] += 1;
            }
        }
    }
    let n = paths.len() as f64;
    df.iter()
        .map(|&d| match (d, mode) {
            (0, _) => 0.0,
            (d, IdfMode::Raw) => libm::log(n / d as f64),
            (d, IdfMode::Smooth) => libm::log((1.0 + n) / (1.0 + d as f64)) + 1.0,
        })
        .collect()
}

/// Dense `n_path × n_opcode` matrix `tf · idf` against a given idf table.
pub fn tfidf_with(paths: &[Vec<usize>], idf: &[f64]) -> Matrix {
    let mut out = Matrix::zeros(paths.len(), idf.len());
    for (i, p) in paths.iter().enumerate() {
        for &t in p {
            out[(i, t)] += 1.0;
        }
        for (j, w) in out.row_mut(i).iter_mut().enumerate() {
            *w *= idf[j];
        }
    }
    out
}

pub fn compute_tfidf(paths: &[Vec<usize>], vocab: &OpcodeVocabulary) -> Matrix {
    tfidf_with(paths, &compute_idf(paths, vocab.len(), IdfMode::Raw))
}

/// Index of `(i, j)` in a packed lower-triangular store.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    r * (r + 1) / 2 + c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    pub n_path: usize,
    pub n_opcode: usize,
    pub window: usize,
    pub vocab: OpcodeVocabulary,
    pub idf: Vec<f64>,
    /// Packed lower triangle over `n_path + n_opcode` nodes, path nodes first.
    pub weights: Vec<f64>,
    /// Node feature width.
    pub d: usize,
    /// `(n_path + n_opcode) × d`, zero until the model fills the path rows.
    pub node_features: Matrix,
}

impl HeteroGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_path + self.n_opcode
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[tri_index(i, j)]
    }

    pub fn dense(&self) -> Matrix {
        let n = self.n_nodes();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let w = self.weights[tri_index(i, j)];
                m[(i, j)] = w;
                m[(j, i)] = w;
            }
        }
        m
    }

    fn layout(
        n_path: usize,
        vocab: OpcodeVocabulary,
        idf: Vec<f64>,
        window: usize,
        d: usize,
        tfidf: &Matrix,
        ppmi: &Matrix,
    ) -> HeteroGraph {
        let n_opcode = vocab.len();
        let n = n_path + n_opcode;
        let mut weights = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            weights[tri_index(i, i)] = 1.0;
        }
        for p in 0..n_path {
            for o in 0..n_opcode {
                weights[tri_index(n_path + o, p)] = tfidf[(p, o)];
            }
        }
        for a in 0..n_opcode {
            for b in 0..a {
                weights[tri_index(n_path + a, n_path + b)] = ppmi[(a, b)];
            }
        }
        HeteroGraph { n_path, n_opcode, window, vocab, idf, weights, d, node_features: Matrix::zeros(n, d) }
    }

    /// PPMI block of the opcode nodes, with the unit diagonal.
    pub fn ppmi_block(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_opcode, self.n_opcode);
        for a in 0..self.n_opcode {
            for b in 0..self.n_opcode {
                m[(a, b)] = self.weight(self.n_path + a, self.n_path + b);
            }
        }
        m
    }

    /// A new graph with `extra` appended as path nodes after the existing ones.
    /// Their TF-IDF edges use the frozen vocabulary and idf; unknown opcodes are
    /// dropped and the opcode block is unchanged.
    pub fn attach_paths<'a, P, I>(&self, extra: P) -> HeteroGraph
    where
        P: IntoIterator<Item = I>,
        I: IntoIterator<Item = &'a str>,
    {
        let seqs: Vec<Vec<usize>> = extra.into_iter().map(|p| self.vocab.encode(p)).collect();
        let old = self.n_path;
        let n_path = old + seqs.len();
        let mut tfidf = Matrix::zeros(n_path, self.n_opcode);
        for p in 0..old {
            for o in 0..self.n_opcode {
                tfidf[(p, o)] = self.weight(old + o, p);
            }
        }
        let new = tfidf_with(&seqs, &self.idf);
        for p in 0..seqs.len() {
            tfidf.row_mut(old + p).copy_from_slice(new.row(p));
        }
        HeteroGraph::layout(
            n_path,
            self.vocab.clone(),
            self.idf.clone(),
            self.window,
            self.d,
            &tfidf,
            &self.ppmi_block(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphOptions {
    pub window: usize,
    pub idf: IdfMode,
    pub d: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { window: DEFAULT_WINDOW, idf: IdfMode::Raw, d: 312 }
    }
}

/// Build the vocabulary from the corpus and assemble the graph.
pub fn assemble_graph<'a, P, I>(paths: P, opts: GraphOptions) -> HeteroGraph
where
    P: IntoIterator<Item = I>,
    I: IntoIterator<Item = &'a str>,
{
    let raw: Vec<Vec<&str>> = paths.into_iter().map(|p| p.into_iter().collect()).collect();
    let vocab = OpcodeVocabulary::build(raw.iter().map(|p| p.iter().copied()));
    let seqs: Vec<Vec<usize>> = raw.iter().map(|p| vocab.encode(p.iter().copied())).collect();
    assemble_encoded(&seqs, vocab, opts)
}

pub fn assemble_encoded(seqs: &[Vec<usize>], vocab: OpcodeVocabulary, opts: GraphOptions) -> HeteroGraph {
    let ppmi = compute_ppmi(seqs, &vocab, opts.window);
    let idf = compute_idf(seqs, vocab.len(), opts.idf);
    let tfidf = tfidf_with(seqs, &idf);
    HeteroGraph::layout(seqs.len(), vocab, idf, opts.window, opts.d, &tfidf, &ppmi)
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row sums of the expanded adjacency.
pub fn normalize_adjacency(graph: &HeteroGraph) -> Matrix {
    let n = graph.n_nodes();
    let mut deg = vec![0.0; n];
    for i in 0..n {
        for j in 0..=i {
            let w = graph.weights[tri_index(i, j)];
            deg[i] += w;
            if i != j {
                deg[j] += w;
            }
        }
    }
    let inv: Vec<f64> = deg.iter().map(|&d| 1.0 / libm::sqrt(d)).collect();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let w = graph.weights[tri_index(i, j)] * inv[i] * inv[j];
            m[(i, j)] = w;
            m[(j, i)] = w;
        }
    }
    m
}
