use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ParamStore, Scalar, Tensor};

/// Adam hyperparameters. Weight decay is L2: `g ← g + wd·θ` before the
/// moment updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 9e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Per-parameter first/second moments and the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: ParamStore<T>,
    v: ParamStore<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.m.get(name).ok()
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.v.get(name).ok()
    }

    /// One bias-corrected update of every parameter in `params`.
    /// Parameters absent from `grads` are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>) {
        self.step += 1;
        let c = self.cfg;
        let t = self.step as i32;
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (lr, eps, wd) = (
            T::from_f64_lossy(c.lr),
            T::from_f64_lossy(c.eps),
            T::from_f64_lossy(c.weight_decay),
        );
        let one = T::one();

        for (name, theta) in params.iter_mut() {
            if !self.m.contains(name) {
                self.m.insert(name, Tensor::zeros(theta.shape()));
                self.v.insert(name, Tensor::zeros(theta.shape()));
            }
            let m = self.m.get_mut(name).expect("inserted above").data_mut();
            let v = self.v.get_mut(name).expect("inserted above").data_mut();
            let g = grads.param(name).map(|g| g.data());
            for (i, th) in theta.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(T::zero(), |g| g[i]) + wd * *th;
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *th -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Applies one Adam update in place.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, grads: &Gradients<T>, state: &mut AdamState<T>) {
    state.step(params, grads);
}
