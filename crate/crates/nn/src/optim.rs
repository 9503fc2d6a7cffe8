//! Adaptive-moment (Adam) optimizer with bias correction.

use crate::error::{NnError, Result};
use crate::layer::Layer;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    /// First and second moments, one pair per trainable param in visit order.
    moments: Vec<(String, Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Update a single parameter slot. `slot` indexes the moment buffers.
    fn update(&mut self, slot: usize, name: &str, value: &mut [f64], grad: &[f64]) -> Result<()> {
        if slot == self.moments.len() {
            self.moments.push((name.to_string(), Tensor::zeros(&[value.len()]), Tensor::zeros(&[value.len()])));
        }
        let (ref stored, ref mut m, ref mut v) = self.moments[slot];
        if stored != name || m.len() != value.len() || grad.len() != value.len() {
            return Err(NnError::shape("adam", format!("slot {slot} was `{stored}`, now `{name}`")));
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (k, (x, g)) in value.iter_mut().zip(grad).enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = beta1 * *mk + (1.0 - beta1) * g;
            let vk = &mut v.data_mut()[k];
            *vk = beta2 * *vk + (1.0 - beta2) * g * g;
            let m_hat = *mk / c1;
            let v_hat = *vk / c2;
            *x -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }

    /// Apply one update to every trainable parameter of `layer`.
    ///
    /// Gradients are checked for finiteness first; nothing is modified when any is bad.
    pub fn step(&mut self, layer: &mut dyn Layer) -> Result<()> {
        let mut bad = None;
        layer.visit_params(&mut |name, p| {
            if bad.is_none() && p.trainable && !p.grad.all_finite() {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(NnError::NonFiniteGradient(name));
        }
        self.step += 1;
        let mut slot = 0;
        let mut err = None;
        layer.visit_params(&mut |name, p| {
            if !p.trainable || err.is_some() {
                return;
            }
            let grad = p.grad.data().to_vec();
            if let Err(e) = self.update(slot, name, p.value.data_mut(), &grad) {
                err = Some(e);
            }
            slot += 1;
        });
        err.map_or(Ok(()), Err)
    }

    /// Update a bare parameter vector; for callers outside the layer graph.
    pub fn step_slice(&mut self, value: &mut [f64], grad: &[f64]) -> Result<()> {
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient(format!("element {k}")));
        }
        self.step += 1;
        self.update(0, "slice", value, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Adam::new(AdamConfig::default());
        let mut x = vec![1.5, -2.0];
        for _ in 0..5 {
            opt.step_slice(&mut x, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(AdamConfig::default());
        let mut x = vec![0.0];
        opt.step_slice(&mut x, &[3.7]).unwrap();
        assert!((x[0] + 1e-3).abs() < 1e-9);
        let mut x = vec![0.0];
        let mut opt = Adam::new(AdamConfig::default());
        opt.step_slice(&mut x, &[-0.2]).unwrap();
        assert!((x[0] - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut opt = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
        let mut x = vec![5.0];
        for _ in 0..100 {
            let g = 2.0 * x[0];
            opt.step_slice(&mut x, &[g]).unwrap();
        }
        assert!(x[0].abs() < 0.5, "x = {}", x[0]);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut opt = Adam::new(AdamConfig::default());
        let mut x = vec![0.0];
        assert!(matches!(opt.step_slice(&mut x, &[f64::NAN]), Err(NnError::NonFiniteGradient(_))));
    }
}
