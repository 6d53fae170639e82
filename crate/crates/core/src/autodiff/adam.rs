use alloc::vec::Vec;
use num_traits::Float;

use super::tensor::{ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// Steps of linear learning-rate warm-up; 0 disables it.
    pub warmup: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            warmup: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let c = &self.config;
        if c.warmup == 0 {
            c.lr
        } else {
            c.lr * ((self.step.max(1)) as f64 / c.warmup as f64).min(1.0)
        }
    }

    /// Applies one update. Rows frozen in `store` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(usize, Tensor<T>)]) {
        self.step += 1;
        if self.m.len() < store.len() {
            self.m.resize_with(store.len(), || None);
            self.v.resize_with(store.len(), || None);
        }
        let c = self.config;
        let lr = self.current_lr();
        let t = self.step as i32;
        let bc1 = 1.0 - Float::powi(c.beta1, t);
        let bc2 = 1.0 - Float::powi(c.beta2, t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        for (id, g) in grads {
            let id = *id;
            let frozen = store.frozen_rows(id).map(<[bool]>::to_vec);
            let p = store.get_mut(id);
            let cols = p.cols();
            let m = self.m[id].get_or_insert_with(|| Tensor::zeros(&p.shape));
            let v = self.v[id].get_or_insert_with(|| Tensor::zeros(&p.shape));
            for k in 0..p.data.len() {
                if frozen.as_ref().is_some_and(|f| f[k / cols]) {
                    continue;
                }
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (T::one() - b1) * gk;
                v.data[k] = b2 * v.data[k] + (T::one() - b2) * gk * gk;
                let mh = m.data[k].to_f64() / bc1;
                let vh = v.data[k].to_f64() / bc2;
                p.data[k] = p.data[k] - T::of(lr * mh / (Float::sqrt(vh) + c.eps));
            }
        }
    }
}
