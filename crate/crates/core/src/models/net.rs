use hotspot_nn::init::SeededRng;
use hotspot_nn::layer::{visit_prefixed, ParamVisitor};
use hotspot_nn::{Activation, Dense, Layer, Lstm, Mode, NnError, ReturnMode, Sequential, Tensor};
use serde::{Deserialize, Serialize};

use super::bodies::{build_body, BodySpec};
use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Spatial body per day, then an LSTM over the day sequence.
    Sftt,
    /// Per-cell LSTM over each cell's history, then the spatial body.
    Tfts,
    /// Both branches side by side, concatenated.
    ParB,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Sftt, Architecture::Tfts, Architecture::ParB];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Sftt => "sftt",
            Architecture::Tfts => "tfts",
            Architecture::ParB => "parb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_lowercase();
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}` (expected sftt, tfts or parb)")))
    }
}

fn lstm_stack(inputs: usize, widths: &[usize], rng: &mut SeededRng) -> Sequential {
    let mut seq = Sequential::new();
    let mut n = inputs;
    for (i, &w) in widths.iter().enumerate() {
        let mode = if i + 1 == widths.len() { ReturnMode::Last } else { ReturnMode::All };
        seq.push(Lstm::new(n, w, mode, rng));
        n = w;
    }
    seq
}

/// A full forecaster as one layer.
///
/// Input is `(B·T)×p×p×C`, sample-major (all `T` days of sample 0 first).
/// Output is `B×(H + p²)`: the hotspot head's `H` probabilities (`p²`, or
/// `11·p²` cell-major when multi-label) followed by `p²` non-negative counts.
pub struct Net {
    arch: Architecture,
    p: usize,
    days: usize,
    channels: usize,
    body: Sequential,
    body_features: usize,
    temporal: Sequential,
    temporal_width: usize,
    hot: Dense,
    count: Dense,
    batch: Option<usize>,
}

impl Net {
    pub fn build(config: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let (p, c) = (config.p, config.channels);
        let widths = &config.lstm_widths;
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::config("LSTM widths must be a non-empty list of positive sizes"));
        }
        let temporal_width = *widths.last().expect("non-empty");
        let body_channels = match config.architecture {
            Architecture::Tfts => temporal_width,
            _ => c,
        };
        let spec = BodySpec {
            kind: config.body,
            p,
            channels: body_channels,
            base: config.base_filters,
            batch_norm: config.batch_norm,
            dropout: config.dropout,
            seed: config.seed,
        };
        let body = build_body(&spec, rng)?;
        let (temporal, feature_width) = match config.architecture {
            Architecture::Sftt => (lstm_stack(body.features, widths, rng), temporal_width),
            Architecture::Tfts => (lstm_stack(c, widths, rng), body.features),
            Architecture::ParB => (lstm_stack(c, widths, rng), body.features + p * p * temporal_width),
        };
        let hot_outputs = p * p * config.classes();
        Ok(Net {
            arch: config.architecture,
            p,
            days: config.input_days,
            channels: c,
            body_features: body.features,
            body: body.net,
            temporal,
            temporal_width,
            hot: Dense::new(feature_width, hot_outputs, Activation::Sigmoid, rng),
            count: Dense::new(feature_width, p * p, Activation::Softplus, rng),
            batch: None,
        })
    }

    pub fn hot_outputs(&self) -> usize {
        self.hot.outputs()
    }

    pub fn count_outputs(&self) -> usize {
        self.count.outputs()
    }

    /// Width of the vector the two heads read.
    pub fn feature_width(&self) -> usize {
        self.hot.inputs()
    }

    pub fn body_features(&self) -> usize {
        self.body_features
    }

    pub fn hot_head(&mut self) -> &mut Dense {
        &mut self.hot
    }

    pub fn count_head(&mut self) -> &mut Dense {
        &mut self.count
    }

    pub fn temporal(&mut self) -> &mut Sequential {
        &mut self.temporal
    }

    /// `(B·T)×p×p×C` → `B·p²` sequences of length `T` → `B·p²×h`.
    fn per_cell_forward(&mut self, input: &Tensor, b: usize, mode: Mode) -> Result<Tensor> {
        let (t, cells, c) = (self.days, self.p * self.p, self.channels);
        let seq = input.reshaped(&[b, t, cells, c])?.permute(&[1, 0, 2, 3])?.reshape(&[t, b * cells, c])?;
        Ok(self.temporal.forward(&seq, mode)?)
    }

    fn per_cell_backward(&mut self, grad: &Tensor, b: usize) -> Result<Tensor> {
        let (t, cells, c, p) = (self.days, self.p * self.p, self.channels, self.p);
        let g = self.temporal.backward(grad)?;
        Ok(g.reshape(&[t, b, cells, c])?.permute(&[1, 0, 2, 3])?.reshape(&[b * t, p, p, c])?)
    }

    /// The vector both heads read, one row per sample.
    pub fn features(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let (t, p, c) = (self.days, self.p, self.channels);
        if input.rank() != 4 || input.shape()[1..] != [p, p, c] || input.dim(0) % t != 0 || input.dim(0) == 0 {
            return Err(Error::data(format!(
                "model expects (B·{t})×{p}×{p}×{c} input, got {:?}",
                input.shape()
            )));
        }
        let b = input.dim(0) / t;
        let features = match self.arch {
            Architecture::Sftt => {
                let f = self.body.forward(input, mode)?;
                let seq = f.reshape(&[b, t, self.body_features])?.permute(&[1, 0, 2])?;
                self.temporal.forward(&seq, mode)?
            }
            Architecture::Tfts => {
                let h = self.per_cell_forward(input, b, mode)?;
                let maps = h.reshape(&[b, p, p, self.temporal_width])?;
                self.body.forward(&maps, mode)?
            }
            Architecture::ParB => {
                let f = self.body.forward(input, mode)?;
                let mut spatial = vec![0.0; b * self.body_features];
                for (row, chunk) in f.data().chunks_exact(t * self.body_features).enumerate() {
                    let out = &mut spatial[row * self.body_features..(row + 1) * self.body_features];
                    for day in chunk.chunks_exact(self.body_features) {
                        for (o, v) in out.iter_mut().zip(day) {
                            *o += v;
                        }
                    }
                    out.iter_mut().for_each(|o| *o /= t as f64);
                }
                let spatial = Tensor::from_vec(&[b, self.body_features], spatial)?;
                let temporal = self.per_cell_forward(input, b, mode)?.reshape(&[b, p * p * self.temporal_width])?;
                Tensor::concat_last(&[&spatial, &temporal])?
            }
        };
        Ok(features)
    }

    fn forward_impl(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let features = self.features(input, mode)?;
        let b = features.dim(0);
        let hot = self.hot.forward(&features, mode)?;
        let count = self.count.forward(&features, mode)?;
        self.batch = Some(b);
        Ok(Tensor::concat_last(&[&hot, &count])?)
    }

    fn backward_impl(&mut self, output_grad: &Tensor) -> Result<Tensor> {
        let b = self.batch.take().ok_or(NnError::NoForward("net"))?;
        let (t, p) = (self.days, self.p);
        let parts = output_grad.split_last(&[self.hot.outputs(), self.count.outputs()])?;
        let mut d_features = self.hot.backward(&parts[0])?;
        d_features.add_assign(&self.count.backward(&parts[1])?)?;
        match self.arch {
            Architecture::Sftt => {
                let d_seq = self.temporal.backward(&d_features)?;
                let d_f = d_seq.permute(&[1, 0, 2])?.reshape(&[b * t, self.body_features])?;
                Ok(self.body.backward(&d_f)?)
            }
            Architecture::Tfts => {
                let d_maps = self.body.backward(&d_features)?;
                let d_h = d_maps.reshape(&[b * p * p, self.temporal_width])?;
                self.per_cell_backward(&d_h, b)
            }
            Architecture::ParB => {
                let split = d_features.split_last(&[self.body_features, p * p * self.temporal_width])?;
                let mut d_f = Vec::with_capacity(b * t * self.body_features);
                for row in split[0].data().chunks_exact(self.body_features) {
                    for _ in 0..t {
                        d_f.extend(row.iter().map(|g| g / t as f64));
                    }
                }
                let d_f = Tensor::from_vec(&[b * t, self.body_features], d_f)?;
                let mut dx = self.body.backward(&d_f)?;
                let d_h = split[1].reshaped(&[b * p * p, self.temporal_width])?;
                dx.add_assign(&self.per_cell_backward(&d_h, b)?)?;
                Ok(dx)
            }
        }
    }
}

fn to_nn(e: Error) -> NnError {
    match e {
        Error::Nn(inner) => inner,
        other => NnError::Invalid(other.to_string()),
    }
}

impl Layer for Net {
    fn forward(&mut self, input: &Tensor, mode: Mode) -> hotspot_nn::Result<Tensor> {
        self.forward_impl(input, mode).map_err(to_nn)
    }

    fn backward(&mut self, output_grad: &Tensor) -> hotspot_nn::Result<Tensor> {
        self.backward_impl(output_grad).map_err(to_nn)
    }

    fn visit_params(&mut self, visitor: &mut ParamVisitor<'_>) {
        visit_prefixed(&mut self.body, "body", visitor);
        visit_prefixed(&mut self.temporal, "temporal", visitor);
        visit_prefixed(&mut self.hot, "hot", visitor);
        visit_prefixed(&mut self.count, "count", visitor);
    }

    fn name(&self) -> &'static str {
        "net"
    }
}
