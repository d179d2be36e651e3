use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

pub trait Optimizer {
    fn step(&mut self, params: &mut ParamStore, grads: &Gradients);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

/// Plain SGD, `theta -= lr * g`, with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        if self.velocity.is_empty() && self.momentum != 0.0 {
            self.velocity = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
        }
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            if self.momentum != 0.0 {
                let v = self.velocity[id.index()].data_mut();
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi = self.momentum * *vi + gi;
                }
                let v = self.velocity[id.index()].data();
                for (p, vi) in params.get_mut(id).data_mut().iter_mut().zip(v) {
                    *p -= self.lr * vi;
                }
            } else {
                for (p, gi) in params.get_mut(id).data_mut().iter_mut().zip(g) {
                    *p -= self.lr * gi;
                }
            }
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Adam with decoupled weight decay.
///
/// Per step: `theta *= 1 - lr * wd`, then `theta -= lr * m_hat / (sqrt(v_hat) + eps)`
/// with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

impl Optimizer for AdamW {
    fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        if self.m.is_empty() {
            self.m = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * self.weight_decay * p[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}
