//! Adaptive-moment (Adam) first-order optimiser over a flat parameter slice.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update `params -= lr * m_hat / (sqrt(v_hat) + eps)`; returns the
    /// Euclidean norm of the applied step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> f64 {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut norm2 = 0.0;
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let step = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            *p -= step;
            norm2 += step * step;
        }
        norm2.sqrt()
    }
}
