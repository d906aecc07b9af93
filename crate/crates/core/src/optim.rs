//! Adam and momentum-SGD over a parameter store, plus the cosine schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tape::{ParamId, ParamStore};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        AdamConfig { lr, betas, weight_decay, eps: 1e-8 }
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam {
    ids: Vec<ParamId>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let m = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        let v = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        Adam { ids, m, v, step: 0, config }
    }

    /// One update using the gradients currently in the store. Parameters
    /// without a gradient are skipped. `lr` overrides the configured rate so
    /// a schedule can drive it.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let (b1, b2) = self.config.betas;
        let bc1 = 1.0 - math::powf(b1, self.step as f64);
        let bc2 = 1.0 - math::powf(b2, self.step as f64);
        for (slot, &id) in self.ids.iter().enumerate() {
            let tensor = store.get_mut(id);
            let Some(grad) = tensor.grad() else { continue };
            let grad: Vec<f64> = if self.config.weight_decay != 0.0 {
                grad.iter()
                    .zip(tensor.data())
                    .map(|(g, w)| g + self.config.weight_decay * w)
                    .collect()
            } else {
                grad.to_vec()
            };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (math::sqrt(v_hat) + self.config.eps);
            }
        }
    }
}

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum SGD (no dampening, non-Nesterov).
pub struct Sgd {
    ids: Vec<ParamId>,
    velocity: Vec<Vec<f64>>,
    pub config: SgdConfig,
}

impl Sgd {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: SgdConfig) -> Self {
        let velocity = ids.iter().map(|&id| vec![0.0; store.get(id).numel()]).collect();
        Sgd { ids, velocity, config }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        for (slot, &id) in self.ids.iter().enumerate() {
            let tensor = store.get_mut(id);
            let Some(grad) = tensor.grad() else { continue };
            let grad: Vec<f64> = if self.config.weight_decay != 0.0 {
                grad.iter()
                    .zip(tensor.data())
                    .map(|(g, w)| g + self.config.weight_decay * w)
                    .collect()
            } else {
                grad.to_vec()
            };
            let vel = &mut self.velocity[slot];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                vel[i] = self.config.momentum * vel[i] + grad[i];
                data[i] -= lr * vel[i];
            }
        }
    }
}

/// Cosine learning-rate schedule from `base` down to `min` over `total` steps.
pub fn cosine_lr(base: f64, min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total)) as f64 / total as f64;
    min + 0.5 * (base - min) * (1.0 + math::cos(core::f64::consts::PI * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::{ParamKind, Tape};
    use crate::tensor::Tensor;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(w) = w^2 from w=1, 200 steps at lr 0.1 -> |w| < 1e-2
        let mut store = ParamStore::new();
        let p = store.add(Tensor::new(alloc::vec![1], alloc::vec![1.0]).unwrap(), ParamKind::Weight);
        let mut adam = Adam::new(&store, alloc::vec![p], AdamConfig::new(0.1, (0.9, 0.999), 0.0));
        for _ in 0..200 {
            store.zero_grads();
            let mut tape = Tape::new(&mut store);
            let v = tape.param(p);
            let loss = tape.square_sum(v).unwrap();
            tape.backward(loss).unwrap();
            drop(tape);
            adam.step(&mut store, 0.1);
        }
        assert!(store.get(p).data()[0].abs() < 1e-2);
    }

    #[test]
    fn plain_sgd_step_is_gradient_descent() {
        // f(w) = w, momentum 0, lr eta: w <- w - eta
        let mut store = ParamStore::new();
        let p = store.add(Tensor::new(alloc::vec![1], alloc::vec![0.5]).unwrap(), ParamKind::Weight);
        let mut sgd = Sgd::new(&store, alloc::vec![p], SgdConfig { lr: 0.25, momentum: 0.0, weight_decay: 0.0 });
        let mut tape = Tape::new(&mut store);
        let v = tape.param(p);
        let loss = tape.sum(v).unwrap();
        tape.backward(loss).unwrap();
        drop(tape);
        sgd.step(&mut store, 0.25);
        assert!((store.get(p).data()[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert!((cosine_lr(0.1, 0.0, 0, 100) - 0.1).abs() < 1e-15);
        assert!(cosine_lr(0.1, 0.0, 100, 100).abs() < 1e-15);
        assert!((cosine_lr(0.1, 0.0, 50, 100) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut store = ParamStore::new();
        let p = store.add(Tensor::new(alloc::vec![2], alloc::vec![0.3, -0.4]).unwrap(), ParamKind::Weight);
        let mut adam = Adam::new(&store, alloc::vec![p], AdamConfig::new(0.0, (0.9, 0.999), 0.0));
        let mut tape = Tape::new(&mut store);
        let v = tape.param(p);
        let loss = tape.square_sum(v).unwrap();
        tape.backward(loss).unwrap();
        drop(tape);
        adam.step(&mut store, 0.0);
        assert_eq!(store.get(p).data(), &[0.3, -0.4]);
    }
}
