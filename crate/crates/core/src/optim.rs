//! Adam with bias correction.

use alloc::vec::Vec;

use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_betas(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| {
                let (r, c) = store.value(id).dims();
                Tensor::zeros(r, c)
            })
            .collect();
        Adam { beta1, beta2, eps, second: zeros.clone(), first: zeros, steps: alloc::vec![0; store.len()] }
    }

    /// Updates every parameter, clears gradients and bumps the store's step counter.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        let ids: Vec<ParamId> = store.ids().collect();
        self.step_params(store, lr, &ids);
    }

    /// Updates only `ids`; every gradient is still cleared.
    pub fn step_params(&mut self, store: &mut ParamStore, lr: f64, ids: &[ParamId]) {
        self.step_groups(store, &[(ids, lr)]);
    }

    /// One update where each group of parameters uses its own learning rate.
    pub fn step_groups(&mut self, store: &mut ParamStore, groups: &[(&[ParamId], f64)]) {
        for &(ids, lr) in groups {
            self.update(store, lr, ids);
        }
        store.zero_grads();
        store.bump_step();
    }

    fn update(&mut self, store: &mut ParamStore, lr: f64, ids: &[ParamId]) {
        for &id in ids {
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as f64;
            let c1 = 1.0 - math::powf(self.beta1, t);
            let c2 = 1.0 - math::powf(self.beta2, t);
            let grad = store.grad(id).data().to_vec();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let value = store.value_mut(id).data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                value[j] -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
    }
}
