//! Post-layer-norm transformer encoder over opcode tokens. The summary token's
//! final hidden state is the path feature.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{EncoderParams, LayerParams, ModelConfig, ModelError, PAD};
use crate::linalg::{gemm, matmul, matmul_nt, matmul_tn, Matrix};

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

pub(crate) fn layer_norm(x: &Matrix, g: &Matrix, b: &Matrix) -> (Matrix, LnCache) {
    let n = x.cols as f64;
    let mut y = Matrix::zeros(x.rows, x.cols);
    let mut xhat = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / libm::sqrt(var + LN_EPS);
        inv_std.push(is);
        let xr = xhat.row_mut(r);
        for (o, v) in xr.iter_mut().zip(row) {
            *o = (v - mean) * is;
        }
        let xr = xhat.row(r);
        for (c, o) in y.row_mut(r).iter_mut().enumerate() {
            *o = xr[c] * g.data[c] + b.data[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_back(dy: &Matrix, g: &Matrix, cache: &LnCache, dg: &mut Matrix, db: &mut Matrix) -> Matrix {
    let n = dy.cols as f64;
    let mut dx = Matrix::zeros(dy.rows, dy.cols);
    let mut dxhat = vec![0.0; dy.cols];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for c in 0..dy.cols {
            dg.data[c] += dyr[c] * xh[c];
            db.data[c] += dyr[c];
            dxhat[c] = dyr[c] * g.data[c];
        }
        let s1: f64 = dxhat.iter().sum();
        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let is = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is / n * (n * dxhat[c] - s1 - xh[c] * s2);
        }
    }
    dx
}

fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = matmul(x, w);
    y.add_row(&b.data);
    y
}

/// Accumulates `dw += xᵀ dy`, `db += Σ dy` and returns `dy wᵀ`.
fn linear_back(x: &Matrix, w: &Matrix, dy: &Matrix, dw: &mut Matrix, db: Option<&mut Matrix>) -> Matrix {
    gemm(1.0, x, true, dy, false, 1.0, dw);
    if let Some(db) = db {
        dy.col_sums_into(&mut db.data);
    }
    matmul_nt(dy, w)
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + libm::tanh(GELU_C * (u + 0.044715 * u * u * u)))
}

fn gelu_grad(u: f64) -> f64 {
    let t = libm::tanh(GELU_C * (u + 0.044715 * u * u * u));
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

/// Inverted dropout; `None` in evaluation mode.
pub(crate) struct Dropout<'a, R: Rng> {
    pub rng: &'a mut R,
    pub p: f64,
}

pub(crate) fn mask<R: Rng>(drop: &mut Option<Dropout<'_, R>>, n: usize) -> Option<Vec<f64>> {
    let d = drop.as_mut()?;
    if d.p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - d.p);
    Some((0..n).map(|_| if d.rng.random::<f64>() < d.p { 0.0 } else { keep }).collect())
}

pub(crate) fn apply(m: &mut Matrix, mask: &Option<Vec<f64>>) {
    if let Some(k) = mask {
        m.data.iter_mut().zip(k).for_each(|(x, k)| *x *= k);
    }
}

struct LayerCache {
    h: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    ctx: Matrix,
    mask_a: Option<Vec<f64>>,
    ln1: LnCache,
    h1: Matrix,
    u: Matrix,
    g: Matrix,
    mask_o: Option<Vec<f64>>,
    ln2: LnCache,
}

pub struct EncoderCache {
    tokens: Vec<u16>,
    ln_e: LnCache,
    x0: Matrix,
    mask_e: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
}

impl EncoderCache {
    /// Bytes held by a cache for a sequence of `len` tokens.
    pub fn estimate_bytes(cfg: &ModelConfig, len: usize) -> usize {
        let per_layer = cfg.heads * len * len + len * (8 * cfg.hidden + 2 * cfg.ff);
        8 * (cfg.layers * per_layer + len * (2 * cfg.embed + cfg.hidden))
    }
}

fn attention(cfg: &ModelConfig, q: &Matrix, k: &Matrix, v: &Matrix, keys_masked: &[bool]) -> (Matrix, Vec<Matrix>) {
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let l = q.rows;
    let mut ctx = Matrix::zeros(l, cfg.hidden);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = q.cols_slice(h * dh, dh);
        let kh = k.cols_slice(h * dh, dh);
        let vh = v.cols_slice(h * dh, dh);
        let mut s = matmul_nt(&qh, &kh);
        for r in 0..l {
            let row = s.row_mut(r);
            let mut max = f64::NEG_INFINITY;
            for (c, x) in row.iter_mut().enumerate() {
                *x *= scale;
                if !keys_masked[c] && *x > max {
                    max = *x;
                }
            }
            let mut sum = 0.0;
            for (c, x) in row.iter_mut().enumerate() {
                *x = if keys_masked[c] { 0.0 } else { libm::exp(*x - max) };
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        ctx.set_cols(h * dh, &matmul(&s, &vh));
        probs.push(s);
    }
    (ctx, probs)
}

fn attention_back(cfg: &ModelConfig, c: &LayerCache, dctx: &Matrix) -> (Matrix, Matrix, Matrix) {
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let l = dctx.rows;
    let mut dq = Matrix::zeros(l, cfg.hidden);
    let mut dk = Matrix::zeros(l, cfg.hidden);
    let mut dv = Matrix::zeros(l, cfg.hidden);
    for h in 0..cfg.heads {
        let p = &c.probs[h];
        let dch = dctx.cols_slice(h * dh, dh);
        let qh = c.q.cols_slice(h * dh, dh);
        let kh = c.k.cols_slice(h * dh, dh);
        let vh = c.v.cols_slice(h * dh, dh);
        let mut ds = matmul_nt(&dch, &vh);
        dv.set_cols(h * dh, &matmul_tn(p, &dch));
        for r in 0..l {
            let pr = p.row(r);
            let dr = ds.row_mut(r);
            let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
            for (x, pv) in dr.iter_mut().zip(pr) {
                *x = pv * (*x - dot) * scale;
            }
        }
        dq.set_cols(h * dh, &matmul(&ds, &kh));
        dk.set_cols(h * dh, &matmul_tn(&ds, &qh));
    }
    (dq, dk, dv)
}

fn layer_forward<R: Rng>(
    cfg: &ModelConfig,
    p: &LayerParams,
    h: Matrix,
    keys_masked: &[bool],
    drop: &mut Option<Dropout<'_, R>>,
) -> (Matrix, LayerCache) {
    let q = linear(&h, &p.wq, &p.bq);
    let k = matmul(&h, &p.wk);
    let v = linear(&h, &p.wv, &p.bv);
    let (ctx, probs) = attention(cfg, &q, &k, &v, keys_masked);
    let mut a = linear(&ctx, &p.wo, &p.bo);
    let mask_a = mask(drop, a.data.len());
    apply(&mut a, &mask_a);
    a.add_assign(&h);
    let (h1, ln1) = layer_norm(&a, &p.ln1_g, &p.ln1_b);
    let u = linear(&h1, &p.w1, &p.b1);
    let mut g = u.clone();
    g.data.iter_mut().for_each(|x| *x = gelu(*x));
    let mut o = linear(&g, &p.w2, &p.b2);
    let mask_o = mask(drop, o.data.len());
    apply(&mut o, &mask_o);
    o.add_assign(&h1);
    let (h2, ln2) = layer_norm(&o, &p.ln2_g, &p.ln2_b);
    (h2, LayerCache { h, q, k, v, probs, ctx, mask_a, ln1, h1, u, g, mask_o, ln2 })
}

fn layer_backward(cfg: &ModelConfig, p: &LayerParams, c: &LayerCache, dh2: &Matrix, gp: &mut LayerParams) -> Matrix {
    let dr2 = layer_norm_back(dh2, &p.ln2_g, &c.ln2, &mut gp.ln2_g, &mut gp.ln2_b);
    let mut do_ = dr2.clone();
    apply(&mut do_, &c.mask_o);
    let mut du = linear_back(&c.g, &p.w2, &do_, &mut gp.w2, Some(&mut gp.b2));
    du.data.iter_mut().zip(&c.u.data).for_each(|(d, u)| *d *= gelu_grad(*u));
    let mut dh1 = linear_back(&c.h1, &p.w1, &du, &mut gp.w1, Some(&mut gp.b1));
    dh1.add_assign(&dr2);
    let dr1 = layer_norm_back(&dh1, &p.ln1_g, &c.ln1, &mut gp.ln1_g, &mut gp.ln1_b);
    let mut da = dr1.clone();
    apply(&mut da, &c.mask_a);
    let dctx = linear_back(&c.ctx, &p.wo, &da, &mut gp.wo, Some(&mut gp.bo));
    let (dq, dk, dv) = attention_back(cfg, c, &dctx);
    let mut dh = dr1;
    dh.add_assign(&linear_back(&c.h, &p.wq, &dq, &mut gp.wq, Some(&mut gp.bq)));
    dh.add_assign(&linear_back(&c.h, &p.wk, &dk, &mut gp.wk, None));
    dh.add_assign(&linear_back(&c.h, &p.wv, &dv, &mut gp.wv, Some(&mut gp.bv)));
    dh
}

fn check_tokens(cfg: &ModelConfig, tokens: &[u16]) -> Result<(), ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if tokens.len() > cfg.max_len {
        return Err(ModelError::Shape(alloc::format!("{} tokens exceed {}", tokens.len(), cfg.max_len)));
    }
    if tokens.iter().any(|&t| t as usize >= cfg.vocab) {
        return Err(ModelError::Shape(alloc::format!("token outside vocabulary of {}", cfg.vocab)));
    }
    Ok(())
}

/// Feature of the first token after the last layer. `PAD` tokens are masked out
/// as attention keys. With `drop` set, dropout is applied to the embedding
/// output and to each attention and feed-forward sublayer output.
pub(crate) fn forward<R: Rng>(
    cfg: &ModelConfig,
    p: &EncoderParams,
    tokens: &[u16],
    mut drop: Option<Dropout<'_, R>>,
    keep_cache: bool,
) -> Result<(Vec<f64>, Option<EncoderCache>), ModelError> {
    check_tokens(cfg, tokens)?;
    let l = tokens.len();
    let keys_masked: Vec<bool> = tokens.iter().map(|&t| t == PAD).collect();
    let mut e = Matrix::zeros(l, cfg.embed);
    for (i, &t) in tokens.iter().enumerate() {
        let tok = p.tok.row(t as usize);
        let pos = p.pos.row(i);
        for (c, o) in e.row_mut(i).iter_mut().enumerate() {
            *o = tok[c] + pos[c];
        }
    }
    let (x0, ln_e) = layer_norm(&e, &p.ln_g, &p.ln_b);
    let mut h = linear(&x0, &p.proj_w, &p.proj_b);
    let mask_e = mask(&mut drop, h.data.len());
    apply(&mut h, &mask_e);
    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let (next, cache) = layer_forward(cfg, lp, h, &keys_masked, &mut drop);
        h = next;
        if keep_cache {
            layers.push(cache);
        }
    }
    let f = h.row(0).to_vec();
    let cache = keep_cache.then(|| EncoderCache { tokens: tokens.to_vec(), ln_e, x0, mask_e, layers });
    Ok((f, cache))
}

/// Accumulate parameter gradients for `df`, the gradient at the path feature.
pub(crate) fn backward(cfg: &ModelConfig, p: &EncoderParams, cache: &EncoderCache, df: &[f64], g: &mut EncoderParams) {
    let l = cache.tokens.len();
    let mut dh = Matrix::zeros(l, cfg.hidden);
    dh.row_mut(0).copy_from_slice(df);
    for (i, lc) in cache.layers.iter().enumerate().rev() {
        dh = layer_backward(cfg, &p.layers[i], lc, &dh, &mut g.layers[i]);
    }
    apply(&mut dh, &cache.mask_e);
    let dx0 = linear_back(&cache.x0, &p.proj_w, &dh, &mut g.proj_w, Some(&mut g.proj_b));
    let de = layer_norm_back(&dx0, &p.ln_g, &cache.ln_e, &mut g.ln_g, &mut g.ln_b);
    for (i, &t) in cache.tokens.iter().enumerate() {
        let d = de.row(i);
        g.tok.row_mut(t as usize).iter_mut().zip(d).for_each(|(a, b)| *a += b);
        g.pos.row_mut(i).iter_mut().zip(d).for_each(|(a, b)| *a += b);
    }
}

/// Evaluation-mode path feature.
pub fn encode_path(cfg: &ModelConfig, p: &EncoderParams, tokens: &[u16]) -> Result<Vec<f64>, ModelError> {
    forward::<rand_chacha::ChaCha8Rng>(cfg, p, tokens, None, false).map(|(f, _)| f)
}
