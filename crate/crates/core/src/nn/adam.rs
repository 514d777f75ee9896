use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::Parameters;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step: u64,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Parameters<T>>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<_> = params.named_tensors().iter().map(|(_, t)| t.dim()).collect();
        Adam {
            config,
            step: 0,
            first: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
            second: shapes.iter().map(|&d| Array2::zeros(d)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let c = &self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let correction1 = 1.0 - c.beta1.powi(self.step as i32);
        let correction2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::of(c.learning_rate * correction2.sqrt() / correction1);
        let eps = T::of(c.eps * correction2.sqrt());
        let grads = grads.named_tensors();
        let mut targets = params.tensors_mut();
        assert_eq!(targets.len(), grads.len(), "parameter/gradient layout mismatch");
        for (idx, p) in targets.iter_mut().enumerate() {
            let g = grads[idx].1;
            Zip::from(&mut **p)
                .and(g)
                .and(&mut self.first[idx])
                .and(&mut self.second[idx])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    *p = *p - step_size * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Dense::<f64>::zeros(2, 1);
        let mut g = p.zeros_like();
        g.weight[[0, 0]] = 3.0;
        g.weight[[1, 0]] = -0.5;
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.01, ..Default::default() }, &p);
        adam.update(&mut p, &g);
        assert!((p.weight[[0, 0]] + 0.01).abs() < 1e-9);
        assert!((p.weight[[1, 0]] - 0.01).abs() < 1e-9);
        assert_eq!(p.bias[[0, 0]], 0.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Dense::<f64>::zeros(1, 1);
        p.weight[[0, 0]] = 5.0;
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &p);
        for _ in 0..500 {
            let mut g = p.zeros_like();
            g.weight[[0, 0]] = 2.0 * (p.weight[[0, 0]] - 1.0);
            adam.update(&mut p, &g);
        }
        assert!((p.weight[[0, 0]] - 1.0).abs() < 1e-2);
    }
}
