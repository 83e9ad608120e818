//! Graph weights and normalization against direct counting on mnemonic strings.

use std::collections::{BTreeMap, BTreeSet};

use crossflow_core::graph::{assemble_graph, compute_ppmi, normalize_adjacency, GraphOptions, HeteroGraph, IdfMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OPS: [&str; 12] = [
    "PUSH1", "PUSH2", "ADD", "MSTORE", "SLOAD", "SSTORE", "CALLER", "EQ", "JUMPI", "JUMPDEST", "CALL", "STOP",
];

fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<Vec<&'static str>> {
    let alphabet = rng.random_range(1..=OPS.len());
    (0..rng.random_range(1..=10))
        .map(|_| (0..rng.random_range(0..=50)).map(|_| OPS[rng.random_range(0..alphabet)]).collect())
        .collect()
}

fn opts(window: usize) -> GraphOptions {
    GraphOptions { window, idf: IdfMode::Raw, d: 4 }
}

/// PPMI by listing every window as a set.
fn oracle_ppmi(corpus: &[Vec<&str>], window: usize) -> BTreeMap<(String, String), f64> {
    let mut sets: Vec<BTreeSet<&str>> = Vec::new();
    for p in corpus {
        if p.is_empty() {
            continue;
        }
        if p.len() <= window {
            sets.push(p.iter().copied().collect());
        } else {
            for s in 0..=p.len() - window {
                sets.push(p[s..s + window].iter().copied().collect());
            }
        }
    }
    let w = sets.len() as f64;
    let count = |a: &str, b: &str| sets.iter().filter(|s| s.contains(a) && s.contains(b)).count() as f64;
    let mut out = BTreeMap::new();
    let all: BTreeSet<&str> = corpus.iter().flatten().copied().collect();
    for &a in &all {
        for &b in &all {
            let pab = count(a, b) / w;
            let v = if pab == 0.0 { 0.0 } else { (pab / ((count(a, a) / w) * (count(b, b) / w))).ln().max(0.0) };
            out.insert((a.to_string(), b.to_string()), v);
        }
    }
    out
}

fn oracle_tfidf(corpus: &[Vec<&str>], path: usize, op: &str) -> f64 {
    let tf = corpus[path].iter().filter(|m| **m == op).count() as f64;
    let df = corpus.iter().filter(|p| p.contains(&op)).count() as f64;
    if df == 0.0 {
        0.0
    } else {
        tf * (corpus.len() as f64 / df).ln()
    }
}

fn oracle_dense(g: &HeteroGraph, corpus: &[Vec<&str>]) -> Vec<Vec<f64>> {
    let n = g.n_nodes();
    let ppmi = oracle_ppmi(corpus, g.window);
    let ops = g.vocab.mnemonics();
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                1.0
            } else if i < g.n_path && j < g.n_path {
                0.0
            } else if i < g.n_path {
                oracle_tfidf(corpus, i, &ops[j - g.n_path])
            } else if j < g.n_path {
                oracle_tfidf(corpus, j, &ops[i - g.n_path])
            } else {
                ppmi[&(ops[i - g.n_path].clone(), ops[j - g.n_path].clone())]
            };
        }
    }
    a
}

/// Largest absolute deviation over `trials` corpora; panics above `tol`.
pub fn ppmi_tfidf(trials: usize, tol: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let corpus = random_corpus(&mut rng);
        let window = rng.random_range(2..=25);
        let g = assemble_graph(corpus.iter().map(|p| p.iter().copied()), opts(window));
        let expect = oracle_dense(&g, &corpus);
        let got = g.dense();
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                let err = (got[(i, j)] - e).abs();
                worst = worst.max(err);
                assert!(err <= tol, "({i},{j}) {} vs {e}", got[(i, j)]);
            }
        }
        // the bare matrix keeps the self-association on its diagonal
        let seqs: Vec<Vec<usize>> = corpus.iter().map(|p| g.vocab.encode(p.iter().copied())).collect();
        let bare = compute_ppmi(&seqs, &g.vocab, window);
        let ppmi = oracle_ppmi(&corpus, window);
        for (a, m) in g.vocab.mnemonics().iter().enumerate() {
            let err = (bare[(a, a)] - ppmi[&(m.clone(), m.clone())]).abs();
            worst = worst.max(err);
            assert!(err <= tol);
        }
    }
    worst
}

/// Largest deviation of the normalized matrix from the dense formula over
/// `trials` graphs of at most 20 nodes; panics above `tol`.
pub fn normalization(trials: usize, tol: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < trials {
        let corpus = random_corpus(&mut rng);
        let g = assemble_graph(corpus.iter().map(|p| p.iter().copied()), opts(rng.random_range(2..=25)));
        if g.n_nodes() > 20 {
            continue;
        }
        checked += 1;
        let a = oracle_dense(&g, &corpus);
        let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
        let got = normalize_adjacency(&g);
        for i in 0..a.len() {
            for j in 0..a.len() {
                let e = a[i][j] / (d[i].sqrt() * d[j].sqrt());
                let err = (got[(i, j)] - e).abs();
                worst = worst.max(err);
                assert!(err <= tol, "({i},{j})");
            }
        }
    }
    worst
}

/// A graph with no edges normalizes to exactly the identity.
pub fn identity_graph(n: usize) {
    let corpus: Vec<Vec<&str>> = vec![vec![]; n];
    let g = assemble_graph(corpus.iter().map(|p| p.iter().copied()), GraphOptions::default());
    assert_eq!(g.n_nodes(), n);
    let m = normalize_adjacency(&g);
    for i in 0..n {
        for j in 0..n {
            assert_eq!(m[(i, j)], if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn ppmi_and_tfidf_match_counting() {
    println!("max abs error {:e}", ppmi_tfidf(100, 1e-9));
}

#[test]
fn normalization_matches_dense_oracle() {
    normalization(100, 1e-12);
}

#[test]
fn graph_of_empty_paths_normalizes_to_identity() {
    identity_graph(5);
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<&'static str>>> {
    prop::collection::vec(prop::collection::vec(prop::sample::select(&OPS[..6]), 0..30), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn weights_are_symmetric_and_non_negative(corpus in corpus_strategy(), window in 2usize..12) {
        let g = assemble_graph(corpus.iter().map(|p| p.iter().copied()), opts(window));
        let a = g.dense();
        let m = normalize_adjacency(&g);
        for i in 0..g.n_nodes() {
            prop_assert_eq!(a[(i, i)], 1.0);
            for j in 0..g.n_nodes() {
                prop_assert!(a[(i, j)] >= 0.0);
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                prop_assert!(m[(i, j)].is_finite());
            }
        }
    }

    #[test]
    fn duplicating_the_corpus_keeps_its_statistics(corpus in corpus_strategy(), window in 2usize..12) {
        let twice: Vec<Vec<&str>> = corpus.iter().chain(&corpus).cloned().collect();
        let g1 = assemble_graph(corpus.iter().map(|p| p.iter().copied()), opts(window));
        let g2 = assemble_graph(twice.iter().map(|p| p.iter().copied()), opts(window));
        let (p1, p2) = (g1.ppmi_block(), g2.ppmi_block());
        for (x, y) in p1.data.iter().zip(&p2.data) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in g1.idf.iter().zip(&g2.idf) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        let n = g1.n_path;
        for p in 0..n {
            for o in 0..g1.n_opcode {
                let w = g1.weight(n + o, p);
                prop_assert!((g2.weight(2 * n + o, p) - w).abs() <= 1e-12);
                prop_assert!((g2.weight(2 * n + o, n + p) - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn attached_paths_use_frozen_idf(corpus in corpus_strategy(), extra in corpus_strategy()) {
        let g = assemble_graph(corpus.iter().map(|p| p.iter().copied()), opts(5));
        let h = g.attach_paths(extra.iter().map(|p| p.iter().copied()));
        prop_assert_eq!(h.n_path, g.n_path + extra.len());
        prop_assert_eq!(h.ppmi_block(), g.ppmi_block());
        for (k, p) in extra.iter().enumerate() {
            for (o, m) in g.vocab.mnemonics().iter().enumerate() {
                let tf = p.iter().filter(|x| *x == m).count() as f64;
                prop_assert_eq!(h.weight(h.n_path + o, g.n_path + k), tf * g.idf[o]);
            }
        }
    }
}
