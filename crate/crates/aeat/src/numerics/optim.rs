//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use super::store::{GradStore, ParamStore};

pub struct AdamW {
    m: GradStore,
    v: GradStore,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// One update: decoupled decay `theta *= 1 - lr*wd`, then bias-corrected
    /// Adam step from `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for pi in 0..params.len() {
            let g = &grads.grads[pi];
            let m = &mut self.m.grads[pi];
            let v = &mut self.v.grads[pi];
            let data = &mut params.get_mut(pi).data;
            for j in 0..data.len() {
                data[j] *= decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> f64 {
    debug_assert!(step <= total_steps);
    if total_steps == 0 {
        return lr_max;
    }
    let frac = step as f64 / total_steps as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
