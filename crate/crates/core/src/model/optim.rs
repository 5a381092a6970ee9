use std::f64::consts::PI;

use super::params::ParamLayout;
use crate::scalar::Scalar;

/// Linear warm-up followed by cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_frac: f64, total_steps: usize) -> Self {
        let warmup_steps = (warmup_frac * total_steps as f64).ceil() as usize;
        Self {
            base,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    /// Learning rate for the 0-based optimizer step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / decay as f64).min(1.0);
        self.base * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Adam with decoupled weight decay applied to matrices only.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<T>,
    v: Vec<T>,
    decay_mask: Vec<bool>,
    t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(layout: &ParamLayout, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let mut decay_mask = vec![false; layout.total()];
        for spec in layout.tensors() {
            if spec.decays() {
                decay_mask[spec.range()].fill(true);
            }
        }
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![T::zero(); layout.total()],
            v: vec![T::zero(); layout.total()],
            decay_mask,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / bc1);
        let inv_sqrt_bc2 = T::of(1.0 / bc2.sqrt());
        let eps = T::of(self.eps);
        let shrink = T::of(1.0 - lr * self.weight_decay);
        for i in 0..params.len() {
            let g = grad[i];
            if self.decay_mask[i] {
                params[i] *= shrink;
            }
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let denom = self.v[i].sqrt() * inv_sqrt_bc2 + eps;
            params[i] -= step_size * self.m[i] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!((s.lr(10) - 1.0).abs() < 1e-12);
        assert!((s.lr(55) - 0.5).abs() < 1e-12);
        assert!(s.lr(99) < 0.01);
        let mut prev = f64::INFINITY;
        for step in 10..100 {
            assert!(s.lr(step) <= prev);
            prev = s.lr(step);
        }
    }
}
