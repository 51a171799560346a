//! Adam with optional global-norm gradient clipping.

use super::layers::{cast, Scalar};
use super::network::{Gradients, PolicyNet};

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled so their global norm does not exceed this; 0 disables.
    pub max_grad_norm: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, max_grad_norm: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_grad_norm,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one descent step (the gradient is of a loss to minimize).
    pub fn step<T: Scalar>(&mut self, net: &mut PolicyNet<T>, grads: &Gradients<T>) {
        if self.first.is_empty() {
            self.first = grads.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        let norm = grads.global_norm();
        let clip = if self.max_grad_norm > 0.0 && norm > self.max_grad_norm { self.max_grad_norm / norm } else { 1.0 };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((param, grad), m), v) in
            net.tensors_mut().into_iter().zip(&grads.tensors).zip(self.first.iter_mut()).zip(self.second.iter_mut())
        {
            for i in 0..param.len() {
                let g = grad[i].to_f64().unwrap() * clip;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = self.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.epsilon);
                param[i] = param[i] - cast::<T>(update);
            }
        }
    }
}
