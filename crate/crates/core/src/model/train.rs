//! Joint training of encoder and GCN, prediction, and finite-difference checks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::encoder::{self, Dropout, EncoderCache};
use super::gcn::{self, init_path_nodes};
use super::loss::{class_weights, interpolated_loss, normalize_weights, softmax, softmax_back};
use super::{Group, ModelConfig, ModelError, Params, Reduction, TrainConfig, CLASSES};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Upper bound on encoder caches kept alive across one mini-batch; sequences past
/// it are re-run during the backward pass with the same dropout stream.
const CACHE_BUDGET: usize = 512 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Weighted mean per-sample loss over the epoch's mini-batches.
    pub loss: f64,
    /// Evaluation-mode accuracy on the training paths after the epoch.
    pub train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Params,
    /// Evaluation-mode features of the training paths, one row per path node.
    pub memory: Matrix,
    pub weights: [f64; CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub y: [f64; CLASSES],
    pub y_bert: [f64; CLASSES],
    pub y_gcn: [f64; CLASSES],
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolVerdict {
    Malicious,
    Benign,
    NoEvidence,
}

impl ProtocolVerdict {
    /// Malicious if any path's argmax is class 1; no evidence without paths.
    pub fn aggregate(preds: &[Prediction]) -> ProtocolVerdict {
        if preds.is_empty() {
            ProtocolVerdict::NoEvidence
        } else if preds.iter().any(|p| p.label == 1) {
            ProtocolVerdict::Malicious
        } else {
            ProtocolVerdict::Benign
        }
    }
}

fn pair(v: &[f64]) -> [f64; CLASSES] {
    [v[0], v[1]]
}

fn argmax(y: &[f64]) -> usize {
    if y[1] > y[0] {
        1
    } else {
        0
    }
}

fn heads(p: &Params, logits_g: &Matrix, row: usize, f: &[f64], lambda: f64) -> Prediction {
    let y_gcn = softmax(logits_g.row(row));
    let y_bert = super::loss::bert_head(f, &p.bert_w);
    let y: Vec<f64> = y_gcn.iter().zip(&y_bert).map(|(g, b)| lambda * g + (1.0 - lambda) * b).collect();
    Prediction { label: argmax(&y), y: pair(&y), y_bert: pair(&y_bert), y_gcn: pair(&y_gcn) }
}

/// Summary features of every sequence, evaluation mode.
pub fn encode_all(cfg: &ModelConfig, p: &Params, tokens: &[Vec<u16>]) -> Result<Matrix, ModelError> {
    let mut m = Matrix::zeros(tokens.len(), cfg.hidden);
    for (i, t) in tokens.iter().enumerate() {
        let f = encoder::encode_path(cfg, &p.encoder, t)?;
        m.row_mut(i).copy_from_slice(&f);
    }
    Ok(m)
}

/// Evaluation-mode predictions for path rows `rows` given their features.
fn evaluate(p: &Params, adj: &Matrix, feats: &Matrix, rows: core::ops::Range<usize>, lambda: f64) -> Vec<Prediction> {
    let x = init_path_nodes(adj.rows, feats);
    let logits = gcn::gcn_logits(adj, &x, &p.gcn_w1, &p.gcn_w2);
    rows.map(|r| heads(p, &logits, r, feats.row(r), lambda)).collect()
}

struct StepOut {
    objective: f64,
    weighted_loss: f64,
    weight_sum: f64,
    feats: Matrix,
    grads: Option<Params>,
}

struct Batch<'a> {
    adj: &'a Matrix,
    memory: &'a Matrix,
    tokens: &'a [Vec<u16>],
    labels: &'a [usize],
    weights: [f64; CLASSES],
    lambda: f64,
    reduction: Reduction,
}

/// Loss of one mini-batch and, when `grads` is set, its gradient. Path rows
/// outside the batch take their features from `memory` as constants.
fn batch_step(
    cfg: &ModelConfig,
    p: &Params,
    b: &Batch<'_>,
    batch: &[usize],
    mut drop: Option<(&mut ChaCha8Rng, f64)>,
    grads: bool,
) -> Result<StepOut, ModelError> {
    let n = batch.len();
    let seeds: Vec<u64> = match drop.as_mut() {
        Some((rng, _)) => (0..n).map(|_| rng.random()).collect(),
        None => vec![0; n],
    };
    let rate = drop.as_ref().map_or(0.0, |d| d.1);
    let run = |i: usize, keep: bool| {
        let mut r = ChaCha8Rng::seed_from_u64(seeds[i]);
        let d = (rate > 0.0).then(|| Dropout { rng: &mut r, p: rate });
        encoder::forward(cfg, &p.encoder, &b.tokens[batch[i]], d, keep)
    };

    let mut feats = Matrix::zeros(n, cfg.hidden);
    let mut caches: Vec<Option<EncoderCache>> = Vec::with_capacity(n);
    let mut budget = CACHE_BUDGET;
    for i in 0..n {
        let need = EncoderCache::estimate_bytes(cfg, b.tokens[batch[i]].len());
        let keep = grads && need <= budget;
        if keep {
            budget -= need;
        }
        let (f, c) = run(i, keep)?;
        feats.row_mut(i).copy_from_slice(&f);
        caches.push(c);
    }

    let mut x = init_path_nodes(b.adj.rows, b.memory);
    for (i, &r) in batch.iter().enumerate() {
        x.row_mut(r).copy_from_slice(feats.row(i));
    }
    let gdrop = drop.as_mut().filter(|d| d.1 > 0.0).map(|(rng, p)| Dropout { rng: &mut **rng, p: *p });
    let (logits_g, gcache) = gcn::forward(b.adj, &x, &p.gcn_w1, &p.gcn_w2, gdrop);
    let logits_b = matmul(&feats, &p.bert_w);

    let div = b.reduction.divisor(n);
    let mut objective = 0.0;
    let mut weighted_loss = 0.0;
    let mut weight_sum = 0.0;
    let mut dlg = Matrix::zeros(logits_g.rows, CLASSES);
    let mut dlb = Matrix::zeros(n, CLASSES);
    for (i, &r) in batch.iter().enumerate() {
        let label = b.labels[r];
        let yg = softmax(logits_g.row(r));
        let yb = softmax(logits_b.row(i));
        let y: Vec<f64> = yg.iter().zip(&yb).map(|(g, q)| b.lambda * g + (1.0 - b.lambda) * q).collect();
        let (l, dy) = interpolated_loss(&y, label, &b.weights);
        objective += l / div;
        weighted_loss += l;
        weight_sum += b.weights[label];
        let dyg: Vec<f64> = dy.iter().map(|d| b.lambda * d / div).collect();
        let dyb: Vec<f64> = dy.iter().map(|d| (1.0 - b.lambda) * d / div).collect();
        dlg.row_mut(r).copy_from_slice(&softmax_back(&yg, &dyg));
        dlb.row_mut(i).copy_from_slice(&softmax_back(&yb, &dyb));
    }
    if !grads {
        return Ok(StepOut { objective, weighted_loss, weight_sum, feats, grads: None });
    }

    let mut g = p.zeros_like();
    let gg = gcn::backward(b.adj, &p.gcn_w1, &p.gcn_w2, &gcache, &dlg);
    g.gcn_w1 = gg.w1;
    g.gcn_w2 = gg.w2;
    g.bert_w = matmul_tn(&feats, &dlb);
    let mut df = matmul_nt(&dlb, &p.bert_w);
    for (i, &r) in batch.iter().enumerate() {
        df.row_mut(i).iter_mut().zip(gg.x.row(r)).for_each(|(a, v)| *a += v);
    }
    for i in 0..n {
        let cache = match caches[i].take() {
            Some(c) => c,
            None => run(i, true)?.1.expect("cache requested"),
        };
        encoder::backward(cfg, &p.encoder, &cache, df.row(i), &mut g.encoder);
    }
    Ok(StepOut { objective, weighted_loss, weight_sum, feats, grads: Some(g) })
}

fn check_inputs(adj: &Matrix, tokens: &[Vec<u16>], labels: &[usize]) -> Result<(), ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if labels.len() != tokens.len() || adj.rows != adj.cols || adj.rows < tokens.len() {
        return Err(ModelError::Shape(alloc::format!(
            "{} sequences, {} labels, adjacency {}x{}",
            tokens.len(),
            labels.len(),
            adj.rows,
            adj.cols
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= CLASSES) {
        return Err(ModelError::MissingClass(l));
    }
    Ok(())
}

/// Train on the path nodes `0..tokens.len()` of the normalized adjacency `adj`.
pub fn train(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    adj: &Matrix,
    tokens: &[Vec<u16>],
    labels: &[usize],
) -> Result<(TrainedModel, Vec<EpochMetrics>), ModelError> {
    cfg.validate()?;
    tc.validate()?;
    check_inputs(adj, tokens, labels)?;
    let mut weights = class_weights(labels, tc.weights)?;
    if tc.normalize_weights {
        weights = normalize_weights(weights, labels);
    }
    let mut params = Params::init(cfg, tc.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let mut memory = encode_all(cfg, &params, tokens)?;
    let mut opt = Adam::new(&params, tc.beta1, tc.beta2, tc.eps);
    let lr = |g: Group| match g {
        Group::Encoder => tc.lr_encoder,
        Group::Gcn => tc.lr_gcn,
    };
    let n = tokens.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let (mut wl, mut ws) = (0.0, 0.0);
        for batch in order.chunks(tc.batch_size) {
            let b = Batch {
                adj,
                memory: &memory,
                tokens,
                labels,
                weights,
                lambda: tc.lambda,
                reduction: tc.reduction,
            };
            let out = batch_step(cfg, &params, &b, batch, Some((&mut rng, tc.dropout)), true)?;
            opt.step(&mut params, out.grads.as_ref().expect("gradients"), lr);
            for (i, &r) in batch.iter().enumerate() {
                memory.row_mut(r).copy_from_slice(out.feats.row(i));
            }
            wl += out.weighted_loss;
            ws += out.weight_sum;
        }
        memory = encode_all(cfg, &params, tokens)?;
        let preds = evaluate(&params, adj, &memory, 0..n, tc.lambda);
        let correct = preds.iter().zip(labels).filter(|(p, &l)| p.label == l).count();
        let train_acc = correct as f64 / n as f64;
        history.push(EpochMetrics { epoch, loss: wl / ws, train_acc });
        if !params.is_finite() {
            return Err(ModelError::Config("training diverged to non-finite parameters"));
        }
        if tc.stop_at_perfect && correct == n {
            break;
        }
    }
    Ok((TrainedModel { model: *cfg, train: *tc, params, memory, weights }, history))
}

/// Predictions for `tokens`, attached as path nodes `memory.rows..` of `adj`.
pub fn predict(model: &TrainedModel, adj: &Matrix, tokens: &[Vec<u16>], lambda: f64) -> Result<Vec<Prediction>, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::Lambda(lambda));
    }
    let n_train = model.memory.rows;
    let n_path = n_train + tokens.len();
    if adj.rows != adj.cols || adj.rows < n_path {
        return Err(ModelError::Shape(alloc::format!(
            "adjacency {}x{} cannot hold {} path nodes",
            adj.rows,
            adj.cols,
            n_path
        )));
    }
    let new = encode_all(&model.model, &model.params, tokens)?;
    let mut feats = Matrix::zeros(n_path, model.model.hidden);
    feats.data[..model.memory.data.len()].copy_from_slice(&model.memory.data);
    feats.data[model.memory.data.len()..].copy_from_slice(&new.data);
    Ok(evaluate(&model.params, adj, &feats, n_train..n_path, lambda))
}

/// Per-path predictions and the aggregated verdict.
pub fn predict_protocol(
    model: &TrainedModel,
    adj: &Matrix,
    tokens: &[Vec<u16>],
    lambda: f64,
) -> Result<(Vec<Prediction>, ProtocolVerdict), ModelError> {
    let preds = predict(model, adj, tokens, lambda)?;
    let v = ProtocolVerdict::aggregate(&preds);
    Ok((preds, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckTarget {
    /// GCN weights under `λ = 1`, encoder features held fixed.
    Gcn,
    /// Encoder and summary head under `λ = 0`.
    Encoder,
    /// Every tensor under `λ = 0.5`.
    Full,
}

#[derive(Debug, Clone)]
pub struct GradCheckSample {
    pub adj: Matrix,
    pub tokens: Vec<Vec<u16>>,
    pub labels: Vec<usize>,
    pub weights: [f64; CLASSES],
}

/// Relative error `‖a − n‖ / (‖a‖ + ‖n‖)` per checked tensor between analytic
/// gradients and central differences with step `1e-5`, all paths in one batch,
/// dropout off.
pub fn gradient_check_tensors(
    cfg: &ModelConfig,
    params: &Params,
    sample: &GradCheckSample,
    target: CheckTarget,
) -> Result<Vec<(String, f64)>, ModelError> {
    const H: f64 = 1e-5;
    check_inputs(&sample.adj, &sample.tokens, &sample.labels)?;
    let lambda = match target {
        CheckTarget::Gcn => 1.0,
        CheckTarget::Encoder => 0.0,
        CheckTarget::Full => 0.5,
    };
    let batch: Vec<usize> = (0..sample.tokens.len()).collect();
    let memory = Matrix::zeros(sample.tokens.len(), cfg.hidden);
    let b = Batch {
        adj: &sample.adj,
        memory: &memory,
        tokens: &sample.tokens,
        labels: &sample.labels,
        weights: sample.weights,
        lambda,
        reduction: Reduction::Classes,
    };
    let analytic = batch_step(cfg, params, &b, &batch, None, true)?.grads.expect("gradients");
    let groups = params.groups();
    let names = params.names();
    let mut out = Vec::new();
    let mut probe = params.clone();
    for (ti, a) in analytic.tensors().into_iter().enumerate() {
        let wanted = match target {
            CheckTarget::Gcn => groups[ti] == Group::Gcn,
            CheckTarget::Encoder => groups[ti] == Group::Encoder,
            CheckTarget::Full => true,
        };
        if !wanted {
            continue;
        }
        let mut diff2 = 0.0;
        let mut num2 = 0.0;
        for i in 0..a.data.len() {
            let orig = probe.tensors()[ti].data[i];
            probe.tensors_mut()[ti].data[i] = orig + H;
            let up = batch_step(cfg, &probe, &b, &batch, None, false)?.objective;
            probe.tensors_mut()[ti].data[i] = orig - H;
            let down = batch_step(cfg, &probe, &b, &batch, None, false)?.objective;
            probe.tensors_mut()[ti].data[i] = orig;
            let num = (up - down) / (2.0 * H);
            diff2 += (num - a.data[i]) * (num - a.data[i]);
            num2 += num * num;
        }
        let (an, nn, dn) = (a.norm(), libm::sqrt(num2), libm::sqrt(diff2));
        let rel = if an + nn == 0.0 { 0.0 } else { dn / (an + nn) };
        out.push((names[ti].clone(), rel));
    }
    Ok(out)
}

/// Largest per-tensor relative error of [`gradient_check_tensors`].
pub fn gradient_check(cfg: &ModelConfig, params: &Params, sample: &GradCheckSample, target: CheckTarget) -> Result<f64, ModelError> {
    Ok(gradient_check_tensors(cfg, params, sample, target)?.into_iter().map(|(_, e)| e).fold(0.0, f64::max))
}
