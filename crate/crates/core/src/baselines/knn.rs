use serde::{Deserialize, Serialize};

use super::{Classifier, Dataset};
use crate::error::{Error, Result};

/// k-nearest neighbours under Euclidean distance; the score is the hot
/// fraction among the `k` closest training rows. Equal distances go to the
/// lower training index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    data: Dataset,
}

impl Knn {
    pub fn fit(data: &Dataset, k: usize) -> Result<Self> {
        if k == 0 || k > data.len() {
            return Err(Error::config(format!("k = {k} needs 1..={} training rows", data.len())));
        }
        Ok(Knn { k, data: data.clone() })
    }

    /// Indices of the `k` nearest training rows, nearest first.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        // (squared distance, index) kept sorted; k is small
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for i in 0..self.data.len() {
            let d: f64 = self.data.row(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() == self.k && d >= best[self.k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, _)| bd <= d);
            best.insert(pos, (d, i));
            best.truncate(self.k);
        }
        best.into_iter().map(|(_, i)| i).collect()
    }
}

impl Classifier for Knn {
    fn score(&self, x: &[f64]) -> f64 {
        let hot = self.neighbors(x).into_iter().filter(|&i| self.data.y[i]).count();
        hot as f64 / self.k as f64
    }
}
