//! Per-channel batch normalization over every axis but the last.

use crate::error::{NnError, Result};
use crate::layer::{Layer, Mode, Param, ParamVisitor};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

pub struct BatchNorm {
    pub scale: Param,
    pub shift: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<Cache>,
}

struct Cache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    /// Batch statistics depend on the input; running statistics do not.
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            scale: Param::new(Tensor::filled(&[channels], 1.0)),
            shift: Param::new(Tensor::zeros(&[channels])),
            running_mean: Param::buffer(Tensor::zeros(&[channels])),
            running_var: Param::buffer(Tensor::filled(&[channels], 1.0)),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.value.len()
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let c = self.channels();
        if input.rank() < 2 || *input.shape().last().unwrap() != c {
            return Err(NnError::shape(
                "batchnorm",
                format!("input {:?} does not end in {c} channels", input.shape()),
            ));
        }
        let rows = input.len() / c;
        if rows == 0 {
            return Err(NnError::Invalid("batchnorm over an empty batch".into()));
        }
        let x = input.data();
        let (mean, var) = if mode.is_training() {
            let mut mean = vec![0.0; c];
            for r in 0..rows {
                for (m, v) in mean.iter_mut().zip(&x[r * c..(r + 1) * c]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; c];
            for r in 0..rows {
                for ch in 0..c {
                    let dev = x[r * c + ch] - mean[ch];
                    var[ch] += dev * dev;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let mom = self.momentum;
            for ch in 0..c {
                let rm = &mut self.running_mean.value.data_mut()[ch];
                *rm = mom * *rm + (1.0 - mom) * mean[ch];
                let rv = &mut self.running_var.value.data_mut()[ch];
                *rv = mom * *rv + (1.0 - mom) * var[ch];
            }
            (mean, var)
        } else {
            (self.running_mean.value.data().to_vec(), self.running_var.value.data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let mut normalized = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        {
            let nx = normalized.data_mut();
            let o = out.data_mut();
            let gamma = self.scale.value.data();
            let beta = self.shift.value.data();
            for r in 0..rows {
                for ch in 0..c {
                    let k = r * c + ch;
                    nx[k] = (x[k] - mean[ch]) * inv_std[ch];
                    o[k] = gamma[ch] * nx[k] + beta[ch];
                }
            }
        }
        self.cache = Some(Cache { normalized, inv_std, batch_stats: mode.is_training() });
        Ok(out)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let Cache { normalized, inv_std, batch_stats } = self.cache.take().ok_or(NnError::NoForward("batchnorm"))?;
        output_grad.check_same_shape("batchnorm backward", &normalized)?;
        let c = self.channels();
        let rows = normalized.len() / c;
        let g = output_grad.data();
        let nx = normalized.data();
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for r in 0..rows {
            for ch in 0..c {
                let k = r * c + ch;
                sum_g[ch] += g[k];
                sum_gx[ch] += g[k] * nx[k];
            }
        }
        for ch in 0..c {
            self.shift.grad.data_mut()[ch] += sum_g[ch];
            self.scale.grad.data_mut()[ch] += sum_gx[ch];
        }
        // Batch statistics depend on the input; this is the full derivative
        // through mean and variance, valid for training-mode forwards.
        let gamma = self.scale.value.data();
        let m = rows as f64;
        let mut input_grad = Tensor::zeros(normalized.shape());
        let dx = input_grad.data_mut();
        for r in 0..rows {
            for ch in 0..c {
                let k = r * c + ch;
                dx[k] = if batch_stats {
                    gamma[ch] * inv_std[ch] * (g[k] - sum_g[ch] / m - nx[k] * sum_gx[ch] / m)
                } else {
                    gamma[ch] * inv_std[ch] * g[k]
                };
            }
        }
        Ok(input_grad)
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        visitor("scale", &mut self.scale);
        visitor("shift", &mut self.shift);
        visitor("running_mean", &mut self.running_mean);
        visitor("running_var", &mut self.running_var);
    }

    fn name(&self) -> &'static str {
        "bn"
    }
}
