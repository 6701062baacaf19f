//! Adam optimizer over a [`ParamStore`].

use crate::autograd::{Element, Tensor};
use crate::nn::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates. Moments are kept per
/// parameter slot and created on the first gradient a parameter receives.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Element> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from `(parameter, gradient)` pairs.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        for (id, grad) in grads {
            let param = store.get_mut(*id);
            assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch");
            let n = grad.shape().numel();
            let (m, v) = self.moments[id.index()].get_or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            for (((p, &g), m), v) in param.as_mut_slice().iter_mut().zip(grad.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}
