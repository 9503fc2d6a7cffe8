//! Inverted dropout: survivors are scaled by `1/(1-rate)` at train time so
//! inference is the identity.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::init::{mix_seed, rng};
use crate::layer::{Layer, Mode};
use crate::tensor::Tensor;

pub struct Dropout {
    rate: f64,
    seed: u64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Dropout { rate, seed, mask: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

/// Stateless form: the mask is a pure function of `(seed, len)`.
pub fn dropout(input: &Tensor, rate: f64, seed: u64, training: bool) -> Result<Tensor> {
    let mode = if training { Mode::Train { step: 0 } } else { Mode::Eval };
    Dropout::new(rate, seed)?.forward(input, mode)
}

impl Layer for Dropout {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let step = match mode {
            Mode::Train { step } if self.rate > 0.0 => step,
            _ => {
                self.mask = None;
                return Ok(input.clone());
            }
        };
        let mut r = rng(mix_seed(self.seed, step));
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..input.len())
            .map(|_| if r.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let data = input.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.mask = Some(mask);
        Tensor::from_vec(input.shape(), data)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        match self.mask.take() {
            None => Ok(output_grad.clone()),
            Some(mask) => {
                if mask.len() != output_grad.len() {
                    return Err(NnError::shape("dropout backward", format!("{:?}", output_grad.shape())));
                }
                let data = output_grad.data().iter().zip(&mask).map(|(g, m)| g * m).collect();
                Tensor::from_vec(output_grad.shape(), data)
            }
        }
    }

    fn name(&self) -> &'static str {
        "dropout"
    }
}
