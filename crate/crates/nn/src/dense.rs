//! Fully connected layer over `N×in` batches: `y = act(x Wᵀ + b)`, `W` is `out×in`.

use rand::Rng;

use crate::activation::Activation;
use crate::error::{NnError, Result};
use crate::init::{he_uniform, lecun_uniform};
use crate::layer::{Layer, Mode, Param, ParamVisitor};
use crate::tensor::Tensor;

pub struct Dense {
    pub weights: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<(Tensor, Tensor, Tensor)>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let w = match activation {
            Activation::Relu => he_uniform(&[outputs, inputs], inputs, rng),
            _ => lecun_uniform(&[outputs, inputs], inputs, rng),
        };
        Dense::from_parts(w, Tensor::zeros(&[outputs]), activation).expect("consistent shapes")
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.rank() != 2 || bias.shape() != [weights.dim(0)] {
            return Err(NnError::shape(
                "dense",
                format!("weights {:?} with bias {:?}", weights.shape(), bias.shape()),
            ));
        }
        Ok(Dense { weights: Param::new(weights), bias: Param::new(bias), activation, cache: None })
    }

    pub fn inputs(&self) -> usize {
        self.weights.value.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weights.value.dim(0)
    }
}

/// `out[r, i] += Σ_j x[r, j] · w[i, j]` for row-major `x` (rows×inner) and `w` (cols×inner).
pub(crate) fn matmul_bt_acc(x: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize, out: &mut [f64]) {
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let or = &mut out[r * cols..(r + 1) * cols];
        for (i, o) in or.iter_mut().enumerate() {
            let wi = &w[i * inner..(i + 1) * inner];
            let mut acc = 0.0;
            for (a, b) in xr.iter().zip(wi) {
                acc += a * b;
            }
            *o += acc;
        }
    }
}

/// `dw[i, j] += Σ_r g[r, i] · x[r, j]` and `dx[r, j] += Σ_i g[r, i] · w[i, j]`.
pub(crate) fn matmul_backward_acc(
    g: &[f64],
    x: &[f64],
    w: &[f64],
    rows: usize,
    inner: usize,
    cols: usize,
    dw: &mut [f64],
    dx: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * inner..(r + 1) * inner];
        let dxr = &mut dx[r * inner..(r + 1) * inner];
        for i in 0..cols {
            let gv = g[r * cols + i];
            if gv == 0.0 {
                continue;
            }
            let wi = &w[i * inner..(i + 1) * inner];
            let dwi = &mut dw[i * inner..(i + 1) * inner];
            for j in 0..inner {
                dwi[j] += gv * xr[j];
                dxr[j] += gv * wi[j];
            }
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if input.rank() != 2 || input.dim(1) != n_in {
            return Err(NnError::shape(
                "dense",
                format!("input {:?} but layer expects width {n_in}", input.shape()),
            ));
        }
        let rows = input.dim(0);
        let mut z = Tensor::zeros(&[rows, n_out]);
        {
            let zd = z.data_mut();
            for r in 0..rows {
                zd[r * n_out..(r + 1) * n_out].copy_from_slice(self.bias.value.data());
            }
            matmul_bt_acc(input.data(), self.weights.value.data(), rows, n_in, n_out, zd);
        }
        let act = self.activation;
        let y = z.map(|v| act.apply(v));
        self.cache = Some((input.clone(), z, y.clone()));
        Ok(y)
    }

    fn backward(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let (x, z, y) = self.cache.take().ok_or(NnError::NoForward("dense"))?;
        output_grad.check_same_shape("dense backward", &y)?;
        let (rows, n_in, n_out) = (x.dim(0), self.inputs(), self.outputs());
        let act = self.activation;
        let dz: Vec<f64> = output_grad
            .data()
            .iter()
            .zip(z.data().iter().zip(y.data()))
            .map(|(g, (&zv, &yv))| g * act.derivative(zv, yv))
            .collect();
        let db = self.bias.grad.data_mut();
        for r in 0..rows {
            for (b, g) in db.iter_mut().zip(&dz[r * n_out..(r + 1) * n_out]) {
                *b += g;
            }
        }
        let mut input_grad = Tensor::zeros(x.shape());
        matmul_backward_acc(
            &dz,
            x.data(),
            self.weights.value.data(),
            rows,
            n_in,
            n_out,
            self.weights.grad.data_mut(),
            input_grad.data_mut(),
        );
        Ok(input_grad)
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        visitor("weights", &mut self.weights);
        visitor("bias", &mut self.bias);
    }

    fn name(&self) -> &'static str {
        "dense"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::sigmoid;

    #[test]
    fn identity_weights_linear_is_identity() {
        let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let mut d = Dense::from_parts(eye, Tensor::zeros(&[3]), Activation::Linear).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1., -2., 3., 0.5, 0., 9.]).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn zero_weights_sigmoid_gives_sigmoid_of_bias() {
        let mut d =
            Dense::from_parts(Tensor::zeros(&[4, 2]), Tensor::filled(&[4], 0.3), Activation::Sigmoid).unwrap();
        let y = d.forward(&Tensor::filled(&[1, 2], 5.0), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == sigmoid(0.3)));
    }

    #[test]
    fn rejects_width_mismatch() {
        let mut d = Dense::new(3, 2, Activation::Relu, &mut crate::init::rng(0));
        assert!(d.forward(&Tensor::zeros(&[1, 4]), Mode::Eval).is_err());
    }
}
