use crate::error::{NnError, Result};
use crate::layer::{Layer, Mode};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
    /// `ln(1 + e^x)`, used where outputs must be non-negative.
    Softplus,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
        }
    }
}

/// Elementwise activation as a standalone layer.
pub struct Act {
    kind: Activation,
    cache: Option<(Tensor, Tensor)>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Act { kind, cache: None }
    }

    pub fn relu() -> Self {
        Act::new(Activation::Relu)
    }
}

impl Layer for Act {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out = input.map(|v| self.kind.apply(v));
        self.cache = Some((input.clone(), out.clone()));
        Ok(out)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let (x, y) = self.cache.take().ok_or(NnError::NoForward("activation"))?;
        output_grad.check_same_shape("activation backward", &y)?;
        let data = output_grad
            .data()
            .iter()
            .zip(x.data().iter().zip(y.data()))
            .map(|(g, (&xv, &yv))| g * self.kind.derivative(xv, yv))
            .collect();
        Tensor::from_vec(y.shape(), data)
    }

    fn name(&self) -> &'static str {
        "act"
    }
}
