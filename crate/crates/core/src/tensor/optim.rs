use alloc::vec;
use alloc::vec::Vec;

use super::{ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Classic L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamMoments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One bias-corrected Adam update. `step` is 1-based.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamMoments<T>, step: u64, cfg: &AdamConfig) {
    let b1 = T::of_f64(cfg.beta1);
    let b2 = T::of_f64(cfg.beta2);
    let one = T::one();
    let wd = T::of_f64(cfg.weight_decay);
    let c1 = T::of_f64(1.0 - num_traits::Float::powi(cfg.beta1, step as i32));
    let c2 = T::of_f64(1.0 - num_traits::Float::powi(cfg.beta2, step as i32));
    let lr = T::of_f64(cfg.lr);
    let eps = T::of_f64(cfg.eps);
    for i in 0..params.len() {
        let g = grads[i] + wd * params[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    moments: Vec<AdamMoments<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let moments = params.iter().map(|(_, _, t)| AdamMoments::zeros(t.numel())).collect();
        Self {
            config,
            moments,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Parameters without a gradient (unused in this pass) are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) {
        self.step += 1;
        for id in params.ids().collect::<Vec<_>>() {
            if let Some(g) = &grads[id.index()] {
                adam_step(
                    params.get_mut(id).data_mut(),
                    g,
                    &mut self.moments[id.index()],
                    self.step,
                    &self.config,
                );
            }
        }
    }
}
