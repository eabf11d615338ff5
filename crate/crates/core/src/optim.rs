//! Adam over a [`ParamSet`].

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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

/// Moment estimates for one parameter set. Only names present at
/// construction are updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: ParamSet<T>,
    v: ParamSet<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn from_parts(config: AdamConfig, m: ParamSet<T>, v: ParamSet<T>, step: u64) -> Self {
        Self { config, m, v, step }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates.
    pub fn moments(&self) -> (&ParamSet<T>, &ParamSet<T>) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) {
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - Float::powi(c.beta1, t);
        let bc2 = 1.0 - Float::powi(c.beta2, t);
        let (b1, b2) = (T::cst(c.beta1), T::cst(c.beta2));
        let step_size = T::cst(c.lr / bc1);
        let (sqrt_bc2, eps) = (T::cst(Float::sqrt(bc2)), T::cst(c.eps));
        for ((name, p), (_, m)) in params.iter_mut().zip(self.m.iter_mut()) {
            let (Ok(g), Some(v)) = (grads.get(name), self.v.get_mut(name)) else { continue };
            for (((pi, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *pi -= step_size * *mi / (vi.sqrt() / sqrt_bc2 + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap());
        let mut g = ParamSet::new();
        g.insert("w", Tensor::from_vec(&[3], vec![4.0f64, -0.01, 0.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &p);
        opt.step(&mut p, &g);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-5);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(&[2], vec![3.0f64, -3.0]).unwrap());
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &p);
        for _ in 0..2000 {
            let mut g = p.clone();
            g.scale_assign(2.0);
            opt.step(&mut p, &g);
        }
        assert!(p.get("w").unwrap().data().iter().all(|v| v.abs() < 1e-2));
    }
}
