//! Softmax heads, interpolation, class weights and weighted cross-entropy.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ModelError, CLASSES};
use crate::linalg::Matrix;

/// `(m, log Σ_j exp(x_j − m))` with `m = max x`; the tail is a `log1p` over the
/// non-maximal terms so it keeps full precision when one logit dominates.
fn lse_parts(x: &[f64]) -> (f64, f64) {
    let Some((k, &m)) = x.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return (f64::NEG_INFINITY, 0.0);
    };
    if !m.is_finite() {
        return (m, 0.0);
    }
    let rest: f64 = x.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, v)| libm::exp(v - m)).sum();
    (m, libm::log1p(rest))
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let (m, tail) = lse_parts(x);
    m + tail
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Given `y = softmax(x)` and `dy`, returns `dx`.
pub fn softmax_back(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(a, b)| a * (b - dot)).collect()
}

/// `softmax(fᵀ W)`
pub fn bert_head(f: &[f64], w: &Matrix) -> Vec<f64> {
    assert_eq!(f.len(), w.rows);
    let logits: Vec<f64> = (0..w.cols).map(|c| f.iter().enumerate().map(|(r, v)| v * w[(r, c)]).sum()).collect();
    softmax(&logits)
}

/// `λ·y_gcn + (1 - λ)·y_bert`
pub fn interpolate(y_gcn: &[f64], y_bert: &[f64], lambda: f64) -> Result<Vec<f64>, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::Lambda(lambda));
    }
    Ok(y_gcn.iter().zip(y_bert).map(|(g, b)| lambda * g + (1.0 - lambda) * b).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Number of classes over class count.
    #[default]
    Categories,
    /// Number of samples over class count.
    Samples,
}

pub fn class_weights(labels: &[usize], scheme: WeightScheme) -> Result<[f64; CLASSES], ModelError> {
    let mut count = [0usize; CLASSES];
    for &l in labels {
        count[l] += 1;
    }
    let num = match scheme {
        WeightScheme::Categories => CLASSES as f64,
        WeightScheme::Samples => labels.len() as f64,
    };
    let mut w = [0.0; CLASSES];
    for c in 0..CLASSES {
        if count[c] == 0 {
            return Err(ModelError::MissingClass(c));
        }
        w[c] = num / count[c] as f64;
    }
    Ok(w)
}

/// Scale `w` so the per-sample weights average to 1 over `labels`.
pub fn normalize_weights(w: [f64; CLASSES], labels: &[usize]) -> [f64; CLASSES] {
    let mean = labels.iter().map(|&l| w[l]).sum::<f64>() / labels.len() as f64;
    w.map(|x| x / mean)
}

/// `w_i · (−x_i + log Σ_j exp x_j)`
pub fn weighted_cross_entropy(x: &[f64], i: usize, w: &[f64]) -> f64 {
    let (m, tail) = lse_parts(x);
    w[i] * ((m - x[i]) + tail)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Sum of weighted losses over the number of classes.
    #[default]
    Classes,
    /// Sum of weighted losses over the batch size.
    Batch,
}

impl Reduction {
    pub fn divisor(self, batch: usize) -> f64 {
        match self {
            Reduction::Classes => CLASSES as f64,
            Reduction::Batch => batch as f64,
        }
    }
}

/// Loss of one sample whose logits are the log of the interpolated distribution,
/// with its gradient with respect to that distribution.
pub(crate) fn interpolated_loss(y: &[f64], i: usize, w: &[f64]) -> (f64, Vec<f64>) {
    let x: Vec<f64> = y.iter().map(|v| libm::log(*v)).collect();
    let loss = weighted_cross_entropy(&x, i, w);
    let total: f64 = y.iter().sum();
    let dy = (0..y.len()).map(|j| w[i] * (1.0 / total - if j == i { 1.0 / y[i] } else { 0.0 })).collect();
    (loss, dy)
}
