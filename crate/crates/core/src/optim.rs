//! First-order optimizers over a [`ParamStore`].

use crate::compute::Tensor;
use crate::params::ParamStore;

pub trait Optimizer {
    fn step(&mut self, store: &mut ParamStore);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) {
        for p in store.iter_mut() {
            if let Some(g) = &p.grad {
                for (w, d) in p.value.data_mut().iter_mut().zip(g.data()) {
                    *w -= self.lr * d;
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

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<(Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) {
        if self.moments.len() != store.len() {
            self.moments = store
                .iter()
                .map(|(_, p)| {
                    (
                        Tensor::zeros(p.value.shape()),
                        Tensor::zeros(p.value.shape()),
                    )
                })
                .collect();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (p, (m, v)) in store.iter_mut().zip(&mut self.moments) {
            let Some(g) = &p.grad else { continue };
            let w = p.value.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..w.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
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
