//! Deep hotspot forecasters: three orderings of a convolutional body and
//! LSTM stacks, each with a hotspot-probability head and a count head.

mod bodies;
mod checkpoint;
mod net;

use hotspot_nn::init::{mix_seed, rng};
use hotspot_nn::{bce_loss, mcce_loss, mse_loss, param_count, zero_grads, Adam, AdamConfig, Layer, Mode, NnError, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Sample, StudyAreaMask, CHANNELS};
use crate::ingest::CrimeType;

pub use bodies::{build_body, reduced_extent, Body, BodyKind, BodySpec, MultiScale};
pub use checkpoint::{config_digest, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::{Architecture, Net};

/// Width presets. `Full` is the largest; `Small` quarters every
/// width; `Tiny` is for gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    Full,
    Small,
    Tiny,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "full" => Ok(Preset::Full),
            "small" => Ok(Preset::Small),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::config(format!("unknown preset `{other}` (expected full, small or tiny)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Small => "small",
            Preset::Tiny => "tiny",
        }
    }
}

/// Classification loss for the multi-label head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MultiLabelLoss {
    /// `-(1/N) Σ y log p` over hot classes only.
    Mcce,
    /// Per-class binary cross entropy.
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub body: BodyKind,
    pub p: usize,
    pub input_days: usize,
    pub channels: usize,
    /// Filter-count unit for the bodies.
    pub base_filters: usize,
    /// SFTT: the stack over day features. TFTS/ParB: the per-cell stack.
    pub lstm_widths: Vec<usize>,
    pub dropout: f64,
    pub batch_norm: bool,
    pub target: CrimeType,
    pub multi_label: bool,
    pub multi_label_loss: MultiLabelLoss,
    pub count_loss_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn preset(preset: Preset, architecture: Architecture, body: BodyKind, p: usize) -> Self {
        let cells = p * p;
        let (base, days, sftt, per_cell) = match preset {
            Preset::Full => (32, 30, vec![500, 500, cells], vec![32, 32, 32]),
            Preset::Small => (8, 30, vec![125, 125, (cells / 4).max(1)], vec![8, 8, 8]),
            Preset::Tiny => (4, 3, vec![8, 8, (cells / 4).max(1)], vec![4, 4, 4]),
        };
        ModelConfig {
            architecture,
            body,
            p,
            input_days: days,
            channels: CHANNELS,
            base_filters: base,
            lstm_widths: if architecture == Architecture::Sftt { sftt } else { per_cell },
            dropout: 0.3,
            batch_norm: true,
            target: CrimeType::AllCrimes,
            multi_label: false,
            multi_label_loss: MultiLabelLoss::Mcce,
            count_loss_weight: 1.0,
            epochs: 50,
            batch_size: 16,
            learning_rate: AdamConfig::default().learning_rate,
            seed: 0,
        }
    }

    /// Hotspot-head outputs per cell.
    pub fn classes(&self) -> usize {
        if self.multi_label {
            CrimeType::COUNT
        } else {
            1
        }
    }

    /// The type the count head predicts.
    pub fn count_type(&self) -> CrimeType {
        if self.multi_label {
            CrimeType::AllCrimes
        } else {
            self.target
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != CHANNELS {
            return Err(Error::config(format!("models read {CHANNELS} channels, config says {}", self.channels)));
        }
        if self.input_days == 0 || self.batch_size == 0 {
            return Err(Error::config("input_days and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.count_loss_weight >= 0.0 && self.count_loss_weight.is_finite()) {
            return Err(Error::config("count loss weight must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Loss components, averaged over masked-in cells (and samples).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub hotspot: f64,
    pub count: f64,
    pub combined: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub losses: Losses,
}

/// One forecast. Masked-out cells hold probability 0 and count 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p: usize,
    /// 1, or 11 for multi-label.
    pub classes: usize,
    /// Cell-major: `cell * classes + class`.
    pub probabilities: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Prediction {
    /// Row-major hotspot scores for `ty`; a binary model has only its own target.
    pub fn scores_for(&self, ty: CrimeType) -> Vec<f64> {
        if self.classes == 1 {
            return self.probabilities.clone();
        }
        self.probabilities.chunks_exact(self.classes).map(|c| c[ty.channel()]).collect()
    }
}

pub struct Model {
    pub config: ModelConfig,
    net: Net,
    optimizer: Adam,
    pub history: Vec<EpochLosses>,
    /// Divisor applied to count targets; fixed at the first training call.
    pub count_scale: Option<f64>,
}

fn divergence(e: NnError) -> Error {
    match e {
        NnError::NonFiniteGradient(name) => Error::Divergence(format!("non-finite gradient in `{name}`")),
        NnError::NonFinite(what) => Error::Divergence(what),
        other => Error::Nn(other),
    }
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let net = Net::build(&config, &mut rng(config.seed))?;
        let optimizer = Adam::new(AdamConfig { learning_rate: config.learning_rate, ..AdamConfig::default() });
        Ok(Model { config, net, optimizer, history: Vec::new(), count_scale: None })
    }

    pub fn net(&mut self) -> &mut Net {
        &mut self.net
    }

    pub fn param_count(&mut self) -> usize {
        param_count(&mut self.net)
    }

    /// `(B·T)×p×p×11` network input; counts are compressed with `ln(1 + x)`.
    pub fn batch_input(&self, samples: &[&Sample]) -> Result<Tensor> {
        let (p, t) = (self.config.p, self.config.input_days);
        let mut data = Vec::with_capacity(samples.len() * t * p * p * CHANNELS);
        for s in samples {
            if s.p() != p || s.input_days != t {
                return Err(Error::data(format!(
                    "sample has p={} and {} input days, model expects p={p} and {t}",
                    s.p(),
                    s.input_days
                )));
            }
            data.extend(s.input_counts().iter().map(|&c| (c as f64).ln_1p()));
        }
        Ok(Tensor::from_vec(&[samples.len() * t, p, p, CHANNELS], data)?)
    }

    fn targets(&self, samples: &[&Sample]) -> (Vec<f64>, Vec<f64>) {
        let scale = self.count_scale.unwrap_or(1.0);
        let mut hot = Vec::new();
        let mut counts = Vec::new();
        for s in samples {
            if self.config.multi_label {
                hot.extend(s.horizon_counts().iter().map(|&c| (c >= 1) as u8 as f64));
            } else {
                hot.extend(s.labels_for(self.config.target).into_iter().map(|l| l as u8 as f64));
            }
            counts.extend(s.counts_for(self.config.count_type()).into_iter().map(|c| c as f64 / scale));
        }
        (hot, counts)
    }

    /// Loss of a forward output against the samples' targets, with its gradient.
    fn loss(&self, output: &Tensor, samples: &[&Sample], mask: &StudyAreaMask) -> Result<(Losses, Tensor)> {
        let b = samples.len();
        let (hot_w, cnt_w) = (self.net.hot_outputs(), self.net.count_outputs());
        let classes = self.config.classes();
        let (hot_y, cnt_y) = self.targets(samples);
        let mut hot_p = Vec::with_capacity(b * hot_w);
        let mut cnt_p = Vec::with_capacity(b * cnt_w);
        for row in output.data().chunks_exact(hot_w + cnt_w) {
            hot_p.extend_from_slice(&row[..hot_w]);
            cnt_p.extend_from_slice(&row[hot_w..]);
        }
        let cell_mask: Vec<bool> = (0..b).flat_map(|_| mask.cells.iter().copied()).collect();
        let (hot_loss, hot_g) = if classes == 1 {
            bce_loss(&hot_p, &hot_y, &cell_mask)?
        } else {
            match self.config.multi_label_loss {
                MultiLabelLoss::Mcce => mcce_loss(&hot_p, &hot_y, &cell_mask, classes)?,
                MultiLabelLoss::Bce => {
                    let wide: Vec<bool> = cell_mask.iter().flat_map(|&m| std::iter::repeat_n(m, classes)).collect();
                    bce_loss(&hot_p, &hot_y, &wide)?
                }
            }
        };
        let (cnt_loss, cnt_g) = mse_loss(&cnt_p, &cnt_y, &cell_mask)?;
        let lambda = self.config.count_loss_weight;
        let mut grad = Vec::with_capacity(output.len());
        for (h, c) in hot_g.chunks_exact(hot_w).zip(cnt_g.chunks_exact(cnt_w)) {
            grad.extend_from_slice(h);
            grad.extend(c.iter().map(|g| lambda * g));
        }
        let losses = Losses { hotspot: hot_loss, count: cnt_loss, combined: hot_loss + lambda * cnt_loss };
        Ok((losses, Tensor::from_vec(output.shape(), grad)?))
    }

    /// Forward and loss only; `mode` controls dropout and batch-norm.
    pub fn evaluate_loss(&mut self, samples: &[&Sample], mask: &StudyAreaMask, mode: Mode) -> Result<Losses> {
        let x = self.batch_input(samples)?;
        let out = self.net.forward(&x, mode)?;
        Ok(self.loss(&out, samples, mask)?.0)
    }

    /// Forward, loss and backward; leaves gradients in the parameters
    /// (zeroed first) without updating them.
    pub fn compute_gradients(&mut self, samples: &[&Sample], mask: &StudyAreaMask, mode: Mode) -> Result<Losses> {
        let x = self.batch_input(samples)?;
        zero_grads(&mut self.net);
        let out = self.net.forward(&x, mode)?;
        let (losses, grad) = self.loss(&out, samples, mask)?;
        if !losses.combined.is_finite() {
            return Err(Error::Divergence(format!(
                "loss is {} (hotspot {}, count {})",
                losses.combined, losses.hotspot, losses.count
            )));
        }
        self.net.backward(&grad)?;
        Ok(losses)
    }

    /// One optimizer update on `samples`; returns the loss before the update.
    pub fn train_step(&mut self, samples: &[&Sample], mask: &StudyAreaMask) -> Result<Losses> {
        let mode = Mode::Train { step: mix_seed(self.config.seed, self.optimizer.steps()) };
        let losses = self.compute_gradients(samples, mask, mode)?;
        self.optimizer.step(&mut self.net).map_err(divergence)?;
        Ok(losses)
    }

    /// Fix the count normalization from the training samples (largest target
    /// count over masked-in cells, at least 1).
    pub fn fit_count_scale(&mut self, samples: &[Sample], mask: &StudyAreaMask) {
        let ty = self.config.count_type();
        let max = samples
            .iter()
            .flat_map(|s| s.counts_for(ty).into_iter().zip(&mask.cells).filter(|(_, &m)| m).map(|(c, _)| c))
            .max()
            .unwrap_or(0);
        self.count_scale = Some(max.max(1) as f64);
    }

    /// Start both heads at the training prior: hot-head biases at the logit of
    /// each cell's hot rate, count-head biases at the inverse softplus of each
    /// cell's mean scaled count. Without this the temporal features drift to
    /// saturation encoding per-cell constants.
    pub fn init_head_biases(&mut self, samples: &[Sample], mask: &StudyAreaMask) {
        if samples.is_empty() {
            return;
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        let (hot, counts) = self.targets(&refs);
        let (hot_w, cnt_w) = (self.net.hot_outputs(), self.net.count_outputs());
        let n = samples.len() as f64;
        let classes = self.config.classes();
        let hot_bias = self.net.hot_head().bias.value.data_mut();
        for (j, b) in hot_bias.iter_mut().enumerate() {
            if !mask.cells[j / classes] {
                continue;
            }
            let q = (hot.iter().skip(j).step_by(hot_w).sum::<f64>() / n).clamp(1e-3, 1.0 - 1e-3);
            *b = (q / (1.0 - q)).ln();
        }
        let count_bias = self.net.count_head().bias.value.data_mut();
        for (j, b) in count_bias.iter_mut().enumerate() {
            if !mask.cells[j] {
                continue;
            }
            let m = (counts.iter().skip(j).step_by(cnt_w).sum::<f64>() / n).max(1e-4);
            *b = m.exp_m1().ln();
        }
    }

    /// Mini-batch training for `config.epochs` epochs. Appends one history
    /// entry per epoch (sample-weighted mean of the batch losses).
    pub fn train(&mut self, samples: &[Sample], mask: &StudyAreaMask) -> Result<&[EpochLosses]> {
        if samples.is_empty() {
            return Err(Error::data("no training samples"));
        }
        if mask.count() == 0 {
            return Err(Error::data("study area is empty"));
        }
        if self.count_scale.is_none() {
            self.fit_count_scale(samples, mask);
            self.init_head_biases(samples, mask);
        }
        let mut shuffle = rng(mix_seed(self.config.seed, 0x5417_0000 + self.history.len() as u64));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut shuffle);
            let mut sum = Losses::default();
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
                let l = self.train_step(&batch, mask)?;
                let w = batch.len() as f64;
                sum.hotspot += l.hotspot * w;
                sum.count += l.count * w;
                sum.combined += l.combined * w;
            }
            let n = samples.len() as f64;
            let losses = Losses { hotspot: sum.hotspot / n, count: sum.count / n, combined: sum.combined / n };
            self.history.push(EpochLosses { epoch: self.history.len(), losses });
        }
        Ok(&self.history)
    }

    /// Deterministic forecasts (dropout off, batch-norm running statistics).
    pub fn predict_many(&mut self, samples: &[Sample], mask: &StudyAreaMask) -> Result<Vec<Prediction>> {
        let p = self.config.p;
        if mask.p != p {
            return Err(Error::data(format!("mask is {}×{}, model is {p}×{p}", mask.p, mask.p)));
        }
        let (hot_w, cnt_w) = (self.net.hot_outputs(), self.net.count_outputs());
        let classes = self.config.classes();
        let scale = self.count_scale.unwrap_or(1.0);
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size) {
            let refs: Vec<&Sample> = chunk.iter().collect();
            let y = self.net.forward(&self.batch_input(&refs)?, Mode::Eval)?;
            for row in y.data().chunks_exact(hot_w + cnt_w) {
                let mut probabilities = row[..hot_w].to_vec();
                let mut counts: Vec<f64> = row[hot_w..].iter().map(|c| c * scale).collect();
                for (cell, &inside) in mask.cells.iter().enumerate() {
                    if !inside {
                        probabilities[cell * classes..(cell + 1) * classes].fill(0.0);
                        counts[cell] = 0.0;
                    }
                }
                out.push(Prediction { p, classes, probabilities, counts });
            }
        }
        Ok(out)
    }

    pub fn predict(&mut self, sample: &Sample, mask: &StudyAreaMask) -> Result<Prediction> {
        Ok(self.predict_many(std::slice::from_ref(sample), mask)?.remove(0))
    }
}
