use hotspot_nn::init::{mix_seed, rng};
use hotspot_nn::{bce_loss, zero_grads, Activation, Adam, AdamConfig, Dense, Layer, Mode, Sequential, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden: vec![150], epochs: 20, batch_size: 64, learning_rate: AdamConfig::default().learning_rate, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DenseWeights {
    inputs: usize,
    outputs: usize,
    /// `outputs×inputs`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Fully connected ReLU network with a sigmoid output, trained with BCE.
///
/// Inputs are `ln(1 + x)`-compressed counts. The output layer starts at zero,
/// so an untrained network scores every cell 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseWeights>,
}

fn squash(x: &[f64]) -> impl Iterator<Item = f64> + '_ {
    x.iter().map(|v| v.max(0.0).ln_1p())
}

impl Mlp {
    fn network(&self) -> Result<Sequential> {
        let mut net = Sequential::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let act = if i == last { Activation::Sigmoid } else { Activation::Relu };
            net.push(Dense::from_parts(
                Tensor::from_vec(&[l.outputs, l.inputs], l.weights.clone())?,
                Tensor::from_vec(&[l.outputs], l.bias.clone())?,
                act,
            )?);
        }
        Ok(net)
    }

    fn absorb(&mut self, net: &mut Sequential) {
        let mut values = Vec::new();
        net.visit_params(&mut |_, p| values.push(p.value.data().to_vec()));
        for (l, mut wb) in self.layers.iter_mut().zip(values.chunks_exact(2).map(|c| c.to_vec())) {
            l.bias = wb.pop().expect("bias");
            l.weights = wb.pop().expect("weights");
        }
    }

    pub fn untrained(inputs: usize, hidden: &[usize], seed: u64) -> Self {
        let mut r = rng(seed);
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            let d = Dense::new(width, h, Activation::Relu, &mut r);
            layers.push(DenseWeights { inputs: width, outputs: h, weights: d.weights.value.into_data(), bias: vec![0.0; h] });
            width = h;
        }
        layers.push(DenseWeights { inputs: width, outputs: 1, weights: vec![0.0; width], bias: vec![0.0] });
        Mlp { layers }
    }

    pub fn fit(data: &Dataset, config: &MlpConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::data("cannot fit an MLP on an empty training set"));
        }
        if config.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        let mut mlp = Mlp::untrained(data.dim, &config.hidden, config.seed);
        if config.epochs == 0 {
            return Ok(mlp);
        }
        let mut net = mlp.network()?;
        let mut opt = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
        let mut shuffle = rng(mix_seed(config.seed, 0x5eed));
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut shuffle);
            for batch in order.chunks(config.batch_size) {
                let mut x = Vec::with_capacity(batch.len() * data.dim);
                for &i in batch {
                    x.extend(squash(data.row(i)));
                }
                let y: Vec<f64> = batch.iter().map(|&i| data.y[i] as u8 as f64).collect();
                let input = Tensor::from_vec(&[batch.len(), data.dim], x)?;
                zero_grads(&mut net);
                let out = net.forward(&input, Mode::Train { step: opt.steps() })?;
                let (loss, grad) = bce_loss(out.data(), &y, &vec![true; batch.len()])?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("MLP loss became {loss}")));
                }
                net.backward(&Tensor::from_vec(&[batch.len(), 1], grad)?)?;
                opt.step(&mut net).map_err(|e| Error::Divergence(e.to_string()))?;
            }
        }
        mlp.absorb(&mut net);
        Ok(mlp)
    }
}

impl Classifier for Mlp {
    fn score(&self, x: &[f64]) -> f64 {
        let mut act: Vec<f64> = squash(x).collect();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            act = (0..l.outputs)
                .map(|o| {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    let z = l.bias[o] + row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
                    if i == last {
                        hotspot_nn::activation::sigmoid(z)
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
        }
        act[0]
    }
}
