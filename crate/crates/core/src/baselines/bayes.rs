use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset};
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes with per-class, per-feature mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Index 0 is the cold class, 1 the hot class.
    log_prior: [f64; 2],
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
}

impl GaussianNb {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let hot = data.positives();
        if hot == 0 || hot == data.len() {
            return Err(Error::data("naive Bayes needs both hot and cold training rows"));
        }
        let d = data.dim;
        let mut n = [0usize; 2];
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        for i in 0..data.len() {
            let c = data.y[i] as usize;
            n[c] += 1;
            for (m, x) in mean[c].iter_mut().zip(data.row(i)) {
                *m += x;
            }
        }
        for c in 0..2 {
            mean[c].iter_mut().for_each(|m| *m /= n[c] as f64);
        }
        let mut var = [vec![0.0; d], vec![0.0; d]];
        for i in 0..data.len() {
            let c = data.y[i] as usize;
            for ((v, x), m) in var[c].iter_mut().zip(data.row(i)).zip(&mean[c]) {
                *v += (x - m) * (x - m);
            }
        }
        for c in 0..2 {
            var[c].iter_mut().for_each(|v| *v = (*v / n[c] as f64).max(VARIANCE_FLOOR));
        }
        let total = data.len() as f64;
        Ok(GaussianNb { log_prior: [(n[0] as f64 / total).ln(), (n[1] as f64 / total).ln()], mean, var })
    }

    /// `log P(c) + Σ log N(x_j; μ_cj, σ²_cj)`.
    pub fn joint_log_likelihood(&self, x: &[f64]) -> [f64; 2] {
        let mut out = self.log_prior;
        for (c, o) in out.iter_mut().enumerate() {
            for ((xj, m), v) in x.iter().zip(&self.mean[c]).zip(&self.var[c]) {
                *o -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (xj - m) * (xj - m) / v);
            }
        }
        out
    }
}

impl Classifier for GaussianNb {
    fn score(&self, x: &[f64]) -> f64 {
        let [cold, hot] = self.joint_log_likelihood(x);
        hotspot_nn::activation::sigmoid(hot - cold)
    }
}
