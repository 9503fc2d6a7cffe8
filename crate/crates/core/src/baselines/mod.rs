//! Classical per-cell classifiers over each cell's raw 30-day history.

mod bayes;
mod knn;
mod mlp;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Sample, StudyAreaMask, CHANNELS};
use crate::ingest::CrimeType;

pub use bayes::GaussianNb;
pub use knn::Knn;
pub use mlp::{Mlp, MlpConfig};
pub use tree::{DecisionTree, MaxFeatures, RandomForest, TreeConfig};

/// One cell's history, day-major: `features[d * 11 + ch]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CellFeatureVector {
    pub features: Vec<f64>,
    pub label: bool,
    pub cell: (usize, usize),
}

/// One vector per masked-in cell, row-major. Labels follow `target`.
pub fn featurize(sample: &Sample, mask: &StudyAreaMask, target: CrimeType) -> Vec<CellFeatureVector> {
    let p = sample.p();
    let days = sample.input_days;
    let input = sample.input_counts();
    let labels = sample.labels_for(target);
    mask.indices()
        .into_iter()
        .map(|cell| {
            let mut features = Vec::with_capacity(days * CHANNELS);
            for d in 0..days {
                let px = (d * p * p + cell) * CHANNELS;
                features.extend(input[px..px + CHANNELS].iter().map(|&c| c as f64));
            }
            CellFeatureVector { features, label: labels[cell], cell: (cell / p, cell % p) }
        })
        .collect()
}

/// Row-major feature matrix with binary labels.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Dataset { dim, x: Vec::new(), y: Vec::new() }
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut d = Dataset::new(dim);
        if rows.len() != labels.len() {
            return Err(Error::data("row and label counts differ"));
        }
        for (r, &l) in rows.iter().zip(labels) {
            d.push(r, l)?;
        }
        Ok(d)
    }

    pub fn push(&mut self, features: &[f64], label: bool) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::data(format!("feature vector of length {} in a {}-dim dataset", features.len(), self.dim)));
        }
        self.x.extend_from_slice(features);
        self.y.push(label);
        Ok(())
    }

    pub fn extend(&mut self, vectors: &[CellFeatureVector]) -> Result<()> {
        for v in vectors {
            self.push(&v.features, v.label)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&l| l).count()
    }

    /// Rows at `idx`, in that order (repeats allowed).
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut d = Dataset::new(self.dim);
        for &i in idx {
            d.x.extend_from_slice(self.row(i));
            d.y.push(self.y[i]);
        }
        d
    }
}

/// Score in `[0, 1]`: how likely the cell is a hotspot.
pub trait Classifier: Send + Sync {
    fn score(&self, x: &[f64]) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    Knn,
    NaiveBayes,
    DecisionTree,
    RandomForest,
    Mlp,
    DeepMlp,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::Knn,
        BaselineKind::NaiveBayes,
        BaselineKind::DecisionTree,
        BaselineKind::RandomForest,
        BaselineKind::Mlp,
        BaselineKind::DeepMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Knn => "knn",
            BaselineKind::NaiveBayes => "naive_bayes",
            BaselineKind::DecisionTree => "decision_tree",
            BaselineKind::RandomForest => "random_forest",
            BaselineKind::Mlp => "mlp",
            BaselineKind::DeepMlp => "deep_mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let key = s.trim().to_lowercase().replace('-', "_");
        BaselineKind::ALL.into_iter().find(|k| k.name() == key)
    }
}

/// Training knobs shared by every baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub k: usize,
    pub tree: TreeConfig,
    pub trees: usize,
    pub mlp_epochs: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig { k: 3, tree: TreeConfig::default(), trees: 10, mlp_epochs: 20, seed: 0 }
    }
}

/// A trained baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Knn(Knn),
    NaiveBayes(GaussianNb),
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    Mlp(Mlp),
}

impl Baseline {
    pub fn fit(kind: BaselineKind, data: &Dataset, config: &BaselineConfig) -> Result<Self> {
        Ok(match kind {
            BaselineKind::Knn => Baseline::Knn(Knn::fit(data, config.k)?),
            BaselineKind::NaiveBayes => Baseline::NaiveBayes(GaussianNb::fit(data)?),
            BaselineKind::DecisionTree => Baseline::DecisionTree(DecisionTree::fit(data, &config.tree)?),
            BaselineKind::RandomForest => Baseline::RandomForest(RandomForest::fit(
                data,
                &config.tree,
                config.trees,
                true,
                MaxFeatures::Sqrt,
                config.seed,
            )?),
            BaselineKind::Mlp | BaselineKind::DeepMlp => {
                let hidden = if kind == BaselineKind::Mlp { vec![150] } else { vec![150, 300, 150, 50] };
                let cfg = MlpConfig { hidden, epochs: config.mlp_epochs, seed: config.seed, ..MlpConfig::default() };
                Baseline::Mlp(Mlp::fit(data, &cfg)?)
            }
        })
    }
}

impl Classifier for Baseline {
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Baseline::Knn(c) => c.score(x),
            Baseline::NaiveBayes(c) => c.score(x),
            Baseline::DecisionTree(c) => c.score(x),
            Baseline::RandomForest(c) => c.score(x),
            Baseline::Mlp(c) => c.score(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use chrono::NaiveDate;

    use super::*;
    use crate::grid::{build_samples, IncidentMapStack};

    #[test]
    fn feature_layout() {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let p = 16;
        let mut counts = vec![0u32; 60 * p * p * CHANNELS];
        // cell (2, 3) gets 2 thefts on day 4 and 1 arson on day 29
        let cell = 2 * p + 3;
        counts[(4 * p * p + cell) * CHANNELS + CrimeType::Theft.channel()] = 2;
        counts[(29 * p * p + cell) * CHANNELS + CrimeType::Arson.channel()] = 1;
        let stack = Arc::new(IncidentMapStack::from_counts(p, 60, start, counts).unwrap());
        let sample = &build_samples(&stack, CrimeType::Theft, 30, 30, 30).unwrap()[0];
        let vecs = featurize(sample, &StudyAreaMask::full(p), CrimeType::Theft);
        assert_eq!(vecs.len(), 256);
        assert!(vecs.iter().all(|v| v.features.len() == 330));
        let v = &vecs[cell];
        assert_eq!(v.cell, (2, 3));
        assert_eq!(v.features[4 * 11 + CrimeType::Theft.channel()], 2.0);
        // concrete + AllCrimes channels both count each incident
        assert_eq!(v.features.iter().sum::<f64>(), 6.0);
        assert!(vecs[0].features.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(BaselineKind::parse(k.name()), Some(k));
        }
        assert_eq!(BaselineKind::parse("Random-Forest"), Some(BaselineKind::RandomForest));
    }
}
