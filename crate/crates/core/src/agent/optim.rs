use serde::{Deserialize, Serialize};

use super::network::{Grads, Tensor};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &Grads<T>) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        let c1 = one - T::of(self.beta1.powi(t));
        let c2 = one - T::of(self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.data[i] = p.data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

pub fn grad_norm<T: Scalar>(grads: &Grads<T>) -> T {
    grads.iter().flatten().map(|g| *g * *g).sum::<T>().sqrt()
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) -> T {
    let norm = grad_norm(grads);
    let max = T::of(max_norm);
    if norm > max {
        let scale = max / (norm + T::of(1e-12));
        grads.iter_mut().flatten().for_each(|g| *g = *g * scale);
    }
    norm
}
