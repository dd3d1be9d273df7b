//! Adam with decoupled weight decay.

use edgesel_tensor::{ParamStore, Role};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every weight selected by `trainable`, using the
    /// gradients accumulated in the store.
    pub fn step(&mut self, store: &mut ParamStore<f32>, trainable: impl Fn(&str) -> bool) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.grad.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            if p.role != Role::Weight || !trainable(&p.name) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad[j] as f64;
                let mj = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                m[j] = mj;
                v[j] = vj;
                let update = self.lr * (mj / c1) / ((vj / c2).sqrt() + self.eps);
                let mut th = *theta as f64 - update;
                th -= self.lr * self.weight_decay * th;
                *theta = th as f32;
            }
        }
    }
}
