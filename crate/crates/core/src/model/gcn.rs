//! Two-layer graph convolution: `logits = Â · drop(relu(Â · drop(X) · W1)) · W2`.

use alloc::vec::Vec;

use rand::Rng;

use super::encoder::{apply, mask, Dropout};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

pub struct GcnCache {
    mask0: Option<Vec<f64>>,
    t: Matrix,
    z1: Matrix,
    mask1: Option<Vec<f64>>,
    p2: Matrix,
}

pub struct GcnGrads {
    pub w1: Matrix,
    pub w2: Matrix,
    pub x: Matrix,
}

pub(crate) fn forward<R: Rng>(
    adj: &Matrix,
    x: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
    mut drop: Option<Dropout<'_, R>>,
) -> (Matrix, GcnCache) {
    let mut xd = x.clone();
    let mask0 = mask(&mut drop, xd.data.len());
    apply(&mut xd, &mask0);
    let t = matmul(adj, &xd);
    let z1 = matmul(&t, w1);
    let mut x1 = z1.clone();
    x1.data.iter_mut().for_each(|v| *v = v.max(0.0));
    let mask1 = mask(&mut drop, x1.data.len());
    apply(&mut x1, &mask1);
    let p2 = matmul(adj, &x1);
    let logits = matmul(&p2, w2);
    (logits, GcnCache { mask0, t, z1, mask1, p2 })
}

/// `adj` must be symmetric.
pub(crate) fn backward(adj: &Matrix, w1: &Matrix, w2: &Matrix, c: &GcnCache, dlogits: &Matrix) -> GcnGrads {
    let dw2 = matmul_tn(&c.p2, dlogits);
    let dp2 = matmul_nt(dlogits, w2);
    let mut dz1 = matmul(adj, &dp2);
    apply(&mut dz1, &c.mask1);
    dz1.data.iter_mut().zip(&c.z1.data).for_each(|(d, z)| {
        if *z <= 0.0 {
            *d = 0.0
        }
    });
    let dw1 = matmul_tn(&c.t, &dz1);
    let dt = matmul_nt(&dz1, w1);
    let mut dx = matmul(adj, &dt);
    apply(&mut dx, &c.mask0);
    GcnGrads { w1: dw1, w2: dw2, x: dx }
}

/// Evaluation-mode logits.
pub fn gcn_logits(adj: &Matrix, x: &Matrix, w1: &Matrix, w2: &Matrix) -> Matrix {
    forward::<rand_chacha::ChaCha8Rng>(adj, x, w1, w2, None).0
}

/// Node features: path rows from `features`, remaining rows zero.
pub fn init_path_nodes(n_nodes: usize, features: &Matrix) -> Matrix {
    assert!(features.rows <= n_nodes);
    let mut x = Matrix::zeros(n_nodes, features.cols);
    x.data[..features.data.len()].copy_from_slice(&features.data);
    x
}
