//! Path classifier: a transformer sequence encoder, a two-layer GCN over the
//! path/opcode graph, linear interpolation of their distributions and weighted
//! cross-entropy, all with hand-written gradients.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

pub mod adam;
pub mod encoder;
pub mod gcn;
pub mod loss;
pub mod train;

pub use loss::{class_weights, interpolate, softmax, weighted_cross_entropy, Reduction, WeightScheme};
pub use train::{
    gradient_check, predict, predict_protocol, train, CheckTarget, EpochMetrics, GradCheckSample, Prediction,
    ProtocolVerdict, TrainedModel,
};

/// Reserved token ids after the 256 opcode bytes.
pub const CLS: u16 = 256;
pub const PAD: u16 = 257;
pub const VOCAB: usize = 258;
pub const CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    /// Positional table size; also the longest sequence, summary token included.
    pub max_len: usize,
    pub gcn_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab: VOCAB,
            embed: 128,
            hidden: 312,
            layers: 4,
            heads: 12,
            ff: 1200,
            max_len: 512,
            gcn_hidden: 200,
        }
    }
}

impl ModelConfig {
    /// A width-16 model for gradient checks and quick tests.
    pub fn tiny() -> Self {
        ModelConfig { vocab: VOCAB, embed: 8, hidden: 16, layers: 2, heads: 2, ff: 32, max_len: 16, gcn_hidden: 8 }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(ModelError::Config("heads must divide hidden"));
        }
        if self.max_len == 0 || self.embed == 0 || self.vocab <= PAD as usize {
            return Err(ModelError::Config("empty embedding or vocabulary"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_gcn: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Opcodes kept per path, summary token included.
    pub truncation: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: WeightScheme,
    /// Rescale class weights so they average 1 over the training samples.
    pub normalize_weights: bool,
    pub reduction: Reduction,
    /// Stop once an epoch ends with perfect training accuracy.
    pub stop_at_perfect: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_encoder: 1e-5,
            lr_gcn: 1e-3,
            dropout: 0.5,
            batch_size: 64,
            lambda: 0.7,
            epochs: 50,
            seed: 0,
            truncation: 512,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: WeightScheme::Categories,
            normalize_weights: true,
            reduction: Reduction::Classes,
            stop_at_perfect: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ModelError::Lambda(self.lambda));
        }
        if self.truncation == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("truncation and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("class {0} has no samples")]
    MissingClass(usize),
    #[error("lambda {0} outside [0, 1]")]
    Lambda(f64),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Summary token followed by at most `truncation - 1` opcode bytes.
pub fn path_tokens(opcodes: impl IntoIterator<Item = u8>, truncation: usize) -> Vec<u16> {
    core::iter::once(CLS)
        .chain(opcodes.into_iter().map(u16::from))
        .take(truncation.max(1))
        .collect()
}

/// Keys carry no bias: it would shift every score in a row equally and leave
/// attention unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_g: Matrix,
    pub ln1_b: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_g: Matrix,
    pub ln2_b: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub tok: Matrix,
    pub pos: Matrix,
    pub ln_g: Matrix,
    pub ln_b: Matrix,
    pub proj_w: Matrix,
    pub proj_b: Matrix,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub encoder: EncoderParams,
    /// `hidden × 2`, no bias.
    pub bert_w: Matrix,
    pub gcn_w1: Matrix,
    pub gcn_w2: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Encoder,
    Gcn,
}

fn ones(n: usize) -> Matrix {
    let mut m = Matrix::zeros(1, n);
    m.fill(1.0);
    m
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Params {
        let (h, f) = (cfg.hidden, cfg.ff);
        let layer = || LayerParams {
            wq: Matrix::zeros(h, h),
            bq: Matrix::zeros(1, h),
            wk: Matrix::zeros(h, h),
            wv: Matrix::zeros(h, h),
            bv: Matrix::zeros(1, h),
            wo: Matrix::zeros(h, h),
            bo: Matrix::zeros(1, h),
            ln1_g: Matrix::zeros(1, h),
            ln1_b: Matrix::zeros(1, h),
            w1: Matrix::zeros(h, f),
            b1: Matrix::zeros(1, f),
            w2: Matrix::zeros(f, h),
            b2: Matrix::zeros(1, h),
            ln2_g: Matrix::zeros(1, h),
            ln2_b: Matrix::zeros(1, h),
        };
        Params {
            encoder: EncoderParams {
                tok: Matrix::zeros(cfg.vocab, cfg.embed),
                pos: Matrix::zeros(cfg.max_len, cfg.embed),
                ln_g: Matrix::zeros(1, cfg.embed),
                ln_b: Matrix::zeros(1, cfg.embed),
                proj_w: Matrix::zeros(cfg.embed, h),
                proj_b: Matrix::zeros(1, h),
                layers: (0..cfg.layers).map(|_| layer()).collect(),
            },
            bert_w: Matrix::zeros(h, CLASSES),
            gcn_w1: Matrix::zeros(h, cfg.gcn_hidden),
            gcn_w2: Matrix::zeros(cfg.gcn_hidden, CLASSES),
        }
    }

    /// Normal(0, 0.02) weights, unit layer-norm gains, zero biases, Glorot-uniform
    /// first GCN layer, and zero classifier heads.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Params {
        let mut p = Params::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let fill = |m: &mut Matrix, rng: &mut ChaCha8Rng| m.data.iter_mut().for_each(|x| *x = normal.sample(rng));
        let e = &mut p.encoder;
        fill(&mut e.tok, &mut rng);
        fill(&mut e.pos, &mut rng);
        e.ln_g = ones(cfg.embed);
        fill(&mut e.proj_w, &mut rng);
        for l in &mut e.layers {
            for w in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                fill(w, &mut rng);
            }
            l.ln1_g = ones(cfg.hidden);
            l.ln2_g = ones(cfg.hidden);
        }
        let a = libm::sqrt(6.0 / (cfg.hidden + cfg.gcn_hidden) as f64);
        let u = Uniform::new_inclusive(-a, a).unwrap();
        p.gcn_w1.data.iter_mut().for_each(|x| *x = u.sample(&mut rng));
        p
    }

    /// Every tensor perturbed by small noise, heads included; for gradient checks.
    pub fn randomized(cfg: &ModelConfig, seed: u64, scale: f64) -> Params {
        let mut p = Params::init(cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for m in p.tensors_mut() {
            m.data.iter_mut().for_each(|x| *x += scale * (rng.random::<f64>() - 0.5));
        }
        p
    }

    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|m| m.fill(0.0));
        z
    }

    /// Names in a fixed order matching [`Params::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = ["encoder.tok", "encoder.pos", "encoder.ln_g", "encoder.ln_b", "encoder.proj_w", "encoder.proj_b"]
            .iter()
            .map(|s| String::from(*s))
            .collect();
        for i in 0..self.encoder.layers.len() {
            for t in [
                "wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
            ] {
                n.push(format!("encoder.layer{i}.{t}"));
            }
        }
        n.extend(["bert_w", "gcn_w1", "gcn_w2"].iter().map(|s| String::from(*s)));
        n
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let e = &self.encoder;
        let mut v = alloc::vec![&e.tok, &e.pos, &e.ln_g, &e.ln_b, &e.proj_w, &e.proj_b];
        for l in &e.layers {
            v.extend([
                &l.wq, &l.bq, &l.wk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_g, &l.ln1_b, &l.w1, &l.b1, &l.w2, &l.b2,
                &l.ln2_g, &l.ln2_b,
            ]);
        }
        v.extend([&self.bert_w, &self.gcn_w1, &self.gcn_w2]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let e = &mut self.encoder;
        let mut v = alloc::vec![&mut e.tok, &mut e.pos, &mut e.ln_g, &mut e.ln_b, &mut e.proj_w, &mut e.proj_b];
        for l in &mut e.layers {
            v.extend([
                &mut l.wq, &mut l.bq, &mut l.wk, &mut l.wv, &mut l.bv, &mut l.wo, &mut l.bo, &mut l.ln1_g,
                &mut l.ln1_b, &mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2, &mut l.ln2_g, &mut l.ln2_b,
            ]);
        }
        v.extend([&mut self.bert_w, &mut self.gcn_w1, &mut self.gcn_w2]);
        v
    }

    pub fn groups(&self) -> Vec<Group> {
        let n = self.tensors().len();
        (0..n).map(|i| if i + 2 >= n { Group::Gcn } else { Group::Encoder }).collect()
    }

    /// Rebuild from named tensors, checking names and shapes against `cfg`.
    pub fn from_named(cfg: &ModelConfig, named: &[(String, Matrix)]) -> Result<Params, ModelError> {
        let mut p = Params::zeros(cfg);
        let names = p.names();
        if names.len() != named.len() {
            return Err(ModelError::Shape(format!("expected {} tensors, got {}", names.len(), named.len())));
        }
        for ((want, slot), (name, m)) in names.iter().zip(p.tensors_mut()).zip(named) {
            if want != name || slot.shape() != m.shape() {
                return Err(ModelError::Shape(format!("tensor {name} {:?} does not match {want} {:?}", m.shape(), slot.shape())));
            }
            *slot = m.clone();
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_align_with_tensors() {
        let cfg = ModelConfig::tiny();
        let mut p = Params::init(&cfg, 1);
        assert_eq!(p.names().len(), p.tensors().len());
        assert_eq!(p.tensors_mut().len(), p.groups().len());
        assert_eq!(p.groups().iter().filter(|g| **g == Group::Gcn).count(), 2);
        let named: Vec<_> = p.names().into_iter().zip(p.tensors().into_iter().cloned()).collect();
        assert_eq!(Params::from_named(&cfg, &named).unwrap(), p);
    }

    #[test]
    fn heads_start_at_zero() {
        let p = Params::init(&ModelConfig::tiny(), 3);
        assert!(p.bert_w.data.iter().all(|&x| x == 0.0));
        assert!(p.gcn_w2.data.iter().all(|&x| x == 0.0));
        assert!(p.gcn_w1.norm() > 0.0);
    }

    #[test]
    fn tokens_truncate_with_summary_first() {
        let t = path_tokens(0u8..=255, 5);
        assert_eq!(t, [CLS, 0, 1, 2, 3]);
        assert_eq!(path_tokens([], 512), [CLS]);
    }

    #[test]
    fn default_head_dim() {
        assert_eq!(ModelConfig::default().head_dim(), 26);
        assert!(ModelConfig::default().validate().is_ok());
    }
}
