//! Adam with one learning rate per parameter group.

use super::{Group, Params};

pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Params,
    v: Params,
}

impl Adam {
    pub fn new(params: &Params, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { beta1, beta2, eps, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: impl Fn(Group) -> f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let groups = params.groups();
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        let state = self.m.tensors_mut().into_iter().zip(self.v.tensors_mut());
        for (((p, g), (m, v)), group) in tensors.zip(state).zip(groups) {
            let lr = lr(group);
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}
